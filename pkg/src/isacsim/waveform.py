"""OFDM sensing symbols with chirp spectra on the subcarrier grid."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, TooManySubcarriers
from .frame import Numerology, SensingSchedule, pulse_times


@dataclass(frozen=True)
class ChirpSpec:
    occupied_subcarriers: int | None = None  # None: every usable subcarrier
    sweep_direction: str = "up"
    amplitude: float = 1.0

    def __post_init__(self):
        if self.sweep_direction not in ("up", "down"):
            raise ConfigError(f"sweep_direction must be 'up' or 'down', got {self.sweep_direction!r}")
        if not self.amplitude > 0:
            raise ConfigError("chirp amplitude must be positive")


@dataclass(frozen=True)
class BasebandSymbol:
    """One sensing symbol.

    ``freq_domain`` is in FFT bin order and related to the useful part of
    ``time_domain`` by a unitary DFT, so both carry the same energy.
    """

    freq_domain: np.ndarray
    time_domain: np.ndarray  # CP + useful part
    duration: float
    cp_len: int

    @property
    def useful(self) -> np.ndarray:
        return self.time_domain[self.cp_len:]

    @property
    def fft_size(self) -> int:
        return len(self.freq_domain)

    @property
    def energy(self) -> float:
        return float(np.vdot(self.useful, self.useful).real)


def occupied_bins(fft_size: int, count: int) -> np.ndarray:
    """Signed subcarrier indices of a block of ``count`` subcarriers centred on DC."""
    return np.arange(count) - count // 2


def synth_chirp_symbol(numerology: Numerology, spec: ChirpSpec = ChirpSpec()) -> BasebandSymbol:
    n = numerology.fft_size
    usable = numerology.usable_subcarriers
    count = usable if spec.occupied_subcarriers is None else int(spec.occupied_subcarriers)
    if count < 1:
        raise ConfigError("at least one occupied subcarrier is required")
    if count > usable:
        raise TooManySubcarriers(f"{count} subcarriers requested, {usable} usable")

    k = occupied_bins(n, count)
    # Quadratic phase: group delay sweeps the whole useful symbol across the band.
    sign = 1.0 if spec.sweep_direction == "up" else -1.0
    phase = sign * np.pi * k.astype(float) ** 2 / count
    # Mean useful-part power equals amplitude**2.
    magnitude = spec.amplitude * np.sqrt(n / count)
    freq = np.zeros(n, dtype=complex)
    freq[k % n] = magnitude * np.exp(1j * phase)

    useful = np.fft.ifft(freq, norm="ortho")
    cp = numerology.cp_len
    time = np.concatenate([useful[n - cp:], useful]) if cp else useful.copy()
    return BasebandSymbol(freq, time, numerology.symbol_duration, cp)


def matched_filter_ref(symbol: BasebandSymbol) -> np.ndarray:
    """Conjugate time-reversed useful part, normalised to unit energy."""
    u = symbol.useful
    return np.conj(u[::-1]) / np.sqrt(symbol.energy)


@dataclass(frozen=True)
class TxTimeline:
    symbols: np.ndarray  # (pulses, cp + fft_size); rows are views of one symbol
    start_times: np.ndarray

    @property
    def total_energy(self) -> float:
        return float(np.sum(np.abs(self.symbols) ** 2))


def assemble_tx_timeline(numerology: Numerology, schedule: SensingSchedule, spec: ChirpSpec = ChirpSpec()) -> TxTimeline:
    sym = synth_chirp_symbol(numerology, spec)
    rows = np.broadcast_to(sym.time_domain, (schedule.pulses_per_cpi, sym.time_domain.size))
    return TxTimeline(rows, pulse_times(numerology, schedule))


def write_iq(path, samples: np.ndarray) -> None:
    """Little-endian float32 interleaved I/Q."""
    samples = np.asarray(samples, dtype=np.complex128).ravel()
    out = np.empty(2 * samples.size, dtype="<f4")
    out[0::2] = samples.real
    out[1::2] = samples.imag
    Path(path).write_bytes(out.tobytes())


def read_iq(path) -> np.ndarray:
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    return raw[0::2].astype(np.float64) + 1j * raw[1::2].astype(np.float64)
