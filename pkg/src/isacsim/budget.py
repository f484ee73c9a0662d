"""Radar-equation link budget and communication overhead accounting.

Output SNR after coherent integration of ``num_symbols`` sensing symbols::

    SNR = Pt G^2 lambda^2 sigma N (T eta) / ((4 pi)^3 R^4 k T0 L)

Defaults reproduce the prototype: 40 dBm back-off power, 12 dB antennas,
3.747 GHz carrier, 0.1 m^2 UAV at 1 km, 256 symbols of 33.33 us at 50 % duty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from scipy.constants import k as BOLTZMANN

from .errors import ConfigError


def db_to_lin(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def lin_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class LinkParams:
    transmit_power: float = 10.0  # W
    antenna_gain: float = 12.0  # dB, each of Tx and Rx
    wavelength: float = 0.080064  # m
    rcs: float = 0.1  # m^2
    num_symbols: int = 256
    symbol_duration: float = 33.33e-6  # s, useful part
    duty_ratio: float = 0.5
    max_range: float = 1000.0  # m
    temperature: float = 290.0  # K
    loss_noise_figure: float = 8.0  # dB
    boltzmann: float = BOLTZMANN

    def __post_init__(self):
        positive = ("transmit_power", "wavelength", "rcs", "num_symbols", "symbol_duration",
                    "max_range", "temperature", "boltzmann")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.duty_ratio <= 1:
            raise ConfigError("duty_ratio must lie in (0, 1]")

    def with_(self, **changes) -> "LinkParams":
        return replace(self, **changes)


def snr_out_linear(params: LinkParams) -> float:
    g = db_to_lin(params.antenna_gain)
    num = (params.transmit_power * g * g * params.wavelength ** 2 * params.rcs
           * params.num_symbols * params.symbol_duration * params.duty_ratio)
    den = ((4 * math.pi) ** 3 * params.max_range ** 4 * params.boltzmann
           * params.temperature * db_to_lin(params.loss_noise_figure))
    return num / den


def snr_out(params: LinkParams) -> float:
    """Integrated output SNR in dB."""
    return lin_to_db(snr_out_linear(params))


def max_detectable_range(params: LinkParams, required_snr_db: float) -> float:
    """Range at which :func:`snr_out` equals ``required_snr_db``."""
    if math.isinf(required_snr_db) and required_snr_db > 0:
        return 0.0
    margin_db = snr_out(params) - required_snr_db
    return params.max_range * 10.0 ** (margin_db / 40.0)


def rcs_for_snr(params: LinkParams, snr_db: float) -> float:
    """RCS giving ``snr_db`` at ``params.max_range``; SNR is linear in RCS."""
    return params.rcs * db_to_lin(snr_db - snr_out(params))


def per_pulse_snr(params: LinkParams, target_range: float, rcs: float) -> float:
    """Linear post-compression SNR of a single symbol (no slow-time integration)."""
    return snr_out_linear(params.with_(num_symbols=1, max_range=target_range, rcs=rcs))


@dataclass(frozen=True)
class RateAccounting:
    benchmark_rate: float  # bit/s
    measured_rate: float  # bit/s
    overhead_fraction: float = 0.0

    def __post_init__(self):
        if not (self.benchmark_rate > 0 and self.measured_rate > 0):
            raise ConfigError("rates must be positive")
        if self.measured_rate > self.benchmark_rate:
            raise ConfigError("measured rate exceeds benchmark")


REFERENCE_RATES = RateAccounting(benchmark_rate=800.79e6, measured_rate=791.18e6)


def rate_loss(accounting: RateAccounting) -> float:
    return (accounting.benchmark_rate - accounting.measured_rate) / accounting.benchmark_rate


def budget_table(params: LinkParams) -> list[tuple[str, float, str, float]]:
    """Rows of (parameter, value, unit, dB contribution to SNR)."""
    rows = [
        ("transmit_power", params.transmit_power, "W", lin_to_db(params.transmit_power)),
        ("antenna_gain_tx_rx", params.antenna_gain, "dB", 2 * params.antenna_gain),
        ("wavelength", params.wavelength, "m", 2 * lin_to_db(params.wavelength)),
        ("rcs", params.rcs, "m^2", lin_to_db(params.rcs)),
        ("num_symbols", params.num_symbols, "-", lin_to_db(params.num_symbols)),
        ("symbol_duration", params.symbol_duration, "s", lin_to_db(params.symbol_duration)),
        ("duty_ratio", params.duty_ratio, "-", lin_to_db(params.duty_ratio)),
        ("(4pi)^3", (4 * math.pi) ** 3, "-", -lin_to_db((4 * math.pi) ** 3)),
        ("max_range", params.max_range, "m", -4 * lin_to_db(params.max_range)),
        ("boltzmann", params.boltzmann, "J/K", -lin_to_db(params.boltzmann)),
        ("temperature", params.temperature, "K", -lin_to_db(params.temperature)),
        ("loss_noise_figure", params.loss_noise_figure, "dB", -params.loss_noise_figure),
    ]
    rows.append(("snr_out", snr_out(params), "dB", sum(r[3] for r in rows)))
    return rows
