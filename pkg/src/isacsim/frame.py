"""NR-like TDD frame model and sensing-symbol placement.

The frame is described by a :class:`Numerology` (subcarrier spacing, FFT size,
slot/period layout) and a :class:`SlotPattern` such as ``"DDDDDDDSUU"``.
Sensing symbols are placed in a subset of downlink slots; the resulting
:class:`SensingSchedule` fixes the pulse repetition interval (PRI) of the
slow-time sampling.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .errors import ConfigError, NonUniformSpacing, NotDownlink

SPACING_TOL = 1e-12  # s


class SlotKind(enum.Enum):
    DOWNLINK = "D"
    SPECIAL = "S"
    UPLINK = "U"


@dataclass(frozen=True)
class Numerology:
    """OFDM numerology and TDD period layout.

    ``cp_fraction`` is the aggregate cyclic-prefix overhead applied uniformly
    to every symbol, so a slot lasts ``symbols_per_slot * (1 + cp_fraction) /
    subcarrier_spacing``.
    """

    subcarrier_spacing: float = 30e3
    bandwidth: float = 100e6
    symbols_per_slot: int = 14
    slots_per_period: int = 10
    period_duration: float = 5e-3
    fft_size: int = 4096
    cp_fraction: float = 1.0 / 14.0

    def __post_init__(self):
        if self.subcarrier_spacing <= 0 or self.bandwidth <= 0:
            raise ConfigError("subcarrier spacing and bandwidth must be positive")
        if self.symbols_per_slot < 1 or self.slots_per_period < 1:
            raise ConfigError("slot layout must contain at least one symbol and slot")
        if not 0 <= self.cp_fraction < 1:
            raise ConfigError("cp_fraction must lie in [0, 1)")
        if self.fft_size * self.subcarrier_spacing < self.bandwidth * (1 - 1e-12):
            raise ConfigError(
                f"fft_size {self.fft_size} x {self.subcarrier_spacing} Hz does not "
                f"cover bandwidth {self.bandwidth} Hz"
            )
        mismatch = abs(self.slots_per_period * self.slot_duration - self.period_duration)
        if mismatch > 1e-9:
            raise ConfigError(
                f"{self.slots_per_period} slots x {self.slot_duration:.6g} s != "
                f"period {self.period_duration} s"
            )

    @property
    def useful_symbol_duration(self) -> float:
        return 1.0 / self.subcarrier_spacing

    @property
    def symbol_duration(self) -> float:
        return (1.0 + self.cp_fraction) / self.subcarrier_spacing

    @property
    def slot_duration(self) -> float:
        return self.symbols_per_slot * self.symbol_duration

    @property
    def sample_rate(self) -> float:
        return self.fft_size * self.subcarrier_spacing

    @property
    def cp_len(self) -> int:
        # Sampled CP is rounded; the timeline keeps the exact fraction.
        return int(round(self.fft_size * self.cp_fraction))

    @property
    def usable_subcarriers(self) -> int:
        return int(math.floor(self.bandwidth / self.subcarrier_spacing + 1e-9))

    @property
    def symbols_per_period(self) -> int:
        return self.symbols_per_slot * self.slots_per_period


@dataclass(frozen=True)
class SlotPattern:
    slots: tuple[SlotKind, ...]

    def __post_init__(self):
        if not any(s is SlotKind.DOWNLINK for s in self.slots):
            raise ConfigError("slot pattern needs at least one downlink slot")

    @classmethod
    def from_string(cls, text: str) -> "SlotPattern":
        try:
            kinds = tuple(SlotKind(ch) for ch in text.strip().upper())
        except ValueError as exc:
            raise ConfigError(f"bad slot pattern {text!r}: use only D, S, U") from exc
        return cls(kinds)

    def __str__(self) -> str:
        return "".join(s.value for s in self.slots)

    def __len__(self) -> int:
        return len(self.slots)

    @property
    def downlink_slots(self) -> list[int]:
        return [i for i, s in enumerate(self.slots) if s is SlotKind.DOWNLINK]


@dataclass(frozen=True)
class SensingSchedule:
    sensing_slot_indices: tuple[int, ...]
    symbol_index_in_slot: int
    pri: float
    pulses_per_cpi: int

    @property
    def cpi_duration(self) -> float:
        return self.pri * self.pulses_per_cpi


@dataclass(frozen=True)
class DerivedAxes:
    range_resolution: float  # m, c / 2B
    range_bin_spacing: float  # m per fast-time sample after compression
    max_unambiguous_velocity: float  # m/s, symmetric +/- limit
    velocity_resolution: float  # m/s per Doppler bin


def sensing_instants(numerology: Numerology, slots, symbol_index: int) -> np.ndarray:
    """Offsets (s) of the sensing symbols within one period, sorted."""
    slots = sorted(slots)
    return np.array(
        [s * numerology.slot_duration + symbol_index * numerology.symbol_duration for s in slots]
    )


def instant_gaps(numerology: Numerology, slots, symbol_index: int) -> np.ndarray:
    """Gaps between consecutive sensing instants including the period wrap."""
    t = sensing_instants(numerology, slots, symbol_index)
    wrapped = np.append(t, t[0] + numerology.period_duration)
    return np.diff(wrapped)


def build_schedule(
    numerology: Numerology,
    pattern: SlotPattern,
    sensing_slots,
    pulses: int,
    symbol_index: int | None = None,
    pri_override: float | None = None,
) -> SensingSchedule:
    """Place sensing symbols and derive the PRI from the actual timeline.

    Raises :class:`NotDownlink` for special/uplink slots and
    :class:`NonUniformSpacing` when the slow-time sampling is not uniform.
    ``pri_override`` replaces the timeline-derived PRI (experimentation only;
    the uniformity check still runs).
    """
    if len(pattern) != numerology.slots_per_period:
        raise ConfigError(
            f"pattern has {len(pattern)} slots, numerology expects {numerology.slots_per_period}"
        )
    slots = sorted(set(int(s) for s in sensing_slots))
    if not slots:
        raise ConfigError("at least one sensing slot is required")
    if pulses < 2:
        raise ConfigError("a CPI needs at least 2 pulses")
    if symbol_index is None:
        symbol_index = numerology.symbols_per_slot - 1
    if not 0 <= symbol_index < numerology.symbols_per_slot:
        raise ConfigError(f"symbol index {symbol_index} outside slot")
    for s in slots:
        if not 0 <= s < len(pattern):
            raise ConfigError(f"slot index {s} outside pattern of length {len(pattern)}")
        if pattern.slots[s] is not SlotKind.DOWNLINK:
            raise NotDownlink(f"slot {s} is {pattern.slots[s].name.lower()}, not downlink")

    gaps = instant_gaps(numerology, slots, symbol_index)
    if gaps.max() - gaps.min() > SPACING_TOL:
        raise NonUniformSpacing(
            f"sensing slots {slots} give gaps {np.round(gaps * 1e3, 6).tolist()} ms"
        )
    pri = float(gaps.mean()) if pri_override is None else float(pri_override)
    return SensingSchedule(tuple(slots), symbol_index, pri, int(pulses))


def pulse_times(numerology: Numerology, schedule: SensingSchedule, t0: float = 0.0) -> np.ndarray:
    """Transmit start time of every pulse of a CPI beginning at period start ``t0``."""
    offsets = sensing_instants(numerology, schedule.sensing_slot_indices, schedule.symbol_index_in_slot)
    n = np.arange(schedule.pulses_per_cpi)
    per = len(offsets)
    return t0 + (n // per) * numerology.period_duration + offsets[n % per]


def sensing_overhead(numerology: Numerology, schedule: SensingSchedule) -> float:
    """Fraction of all symbols in a period used for sensing."""
    return len(schedule.sensing_slot_indices) / numerology.symbols_per_period


def dl_symbol_overhead(numerology: Numerology, pattern: SlotPattern, schedule: SensingSchedule) -> float:
    """Fraction of downlink-slot symbols used for sensing (special slots excluded)."""
    dl_symbols = len(pattern.downlink_slots) * numerology.symbols_per_slot
    return len(schedule.sensing_slot_indices) / dl_symbols


def derived_axes(numerology: Numerology, schedule: SensingSchedule, wavelength: float) -> DerivedAxes:
    return DerivedAxes(
        range_resolution=SPEED_OF_LIGHT / (2.0 * numerology.bandwidth),
        range_bin_spacing=SPEED_OF_LIGHT / (2.0 * numerology.sample_rate),
        max_unambiguous_velocity=wavelength / (4.0 * schedule.pri),
        velocity_resolution=wavelength / (2.0 * schedule.pulses_per_cpi * schedule.pri),
    )
