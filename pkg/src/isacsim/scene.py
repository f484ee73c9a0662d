"""Echo simulation: targets, static clutter, thermal noise and transceiver impairments.

Amplitudes are calibrated against a complex white noise floor of variance
``noise_power`` per sample. Targets get their per-pulse SNR from the radar
equation; clutter scatterers are given directly as a per-sample CNR.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.signal import lfilter

from .budget import LinkParams, db_to_lin, lin_to_db, per_pulse_snr
from .errors import ConfigError, RangeBeyondWindow
from .frame import Numerology, SensingSchedule, pulse_times
from .waveform import BasebandSymbol

NCO_BITS = 32
_NCO_MOD = 1 << NCO_BITS


class Origin(enum.Enum):
    RAW = "raw"
    COMPRESSED = "compressed"
    CANCELLED = "cancelled"


@dataclass(frozen=True)
class TargetSpec:
    range: float  # m
    radial_velocity: float = 0.0  # m/s, positive = receding
    rcs: float = 0.1  # m^2
    azimuth: float = 0.0  # deg

    def __post_init__(self):
        if not self.range > 0:
            raise ConfigError("target range must be positive")
        if not self.rcs > 0:
            raise ConfigError("target rcs must be positive")


@dataclass(frozen=True)
class ClutterScatterer:
    range: float  # m
    cnr_db: float  # per-sample clutter-to-noise ratio before processing
    azimuth: float = 0.0

    def __post_init__(self):
        if not self.range > 0:
            raise ConfigError("clutter range must be positive")
        if not math.isfinite(self.cnr_db):
            raise ConfigError("clutter cnr_db must be finite")


@dataclass(frozen=True)
class ImpairmentConfig:
    phase_jitter_std: float = 0.0  # rad
    amplitude_jitter_std: float = 0.0
    saturation_level_db: float = math.inf  # relative to strongest clutter RMS
    jitter_correlation: float = 0.9

    def __post_init__(self):
        if self.phase_jitter_std < 0 or self.amplitude_jitter_std < 0:
            raise ConfigError("jitter standard deviations must be non-negative")
        if not 0 <= self.jitter_correlation < 1:
            raise ConfigError("jitter_correlation must lie in [0, 1)")
        if math.isnan(self.saturation_level_db) or self.saturation_level_db == -math.inf:
            raise ConfigError("saturation_level_db must be a number or +inf")

    @property
    def saturation_enabled(self) -> bool:
        return math.isfinite(self.saturation_level_db)


@dataclass(frozen=True)
class RxArray:
    num_channels: int = 4
    element_spacing: float = 0.5  # wavelengths

    def __post_init__(self):
        if self.num_channels < 1:
            raise ConfigError("array needs at least one channel")
        if not self.element_spacing > 0:
            raise ConfigError("element spacing must be positive")

    def steering(self, azimuth_deg) -> np.ndarray:
        """Steering vectors, shape (len(azimuth), num_channels)."""
        az = np.radians(np.atleast_1d(np.asarray(azimuth_deg, dtype=float)))
        m = np.arange(self.num_channels)
        return np.exp(2j * np.pi * self.element_spacing * np.outer(np.sin(az), m))


@dataclass
class PulseMatrix:
    samples: np.ndarray  # complex [fast_time, slow_time, channel]
    sample_rate: float
    pulse_times: np.ndarray
    origin: Origin = Origin.RAW
    cp_len: int = 0
    wavelength: float = 0.080064
    valid_from: int = 0  # first slow-time index carrying valid output

    def __post_init__(self):
        if self.samples.ndim != 3:
            raise ConfigError("samples must be [fast_time, slow_time, channel]")
        if self.samples.shape[1] != len(self.pulse_times):
            raise ConfigError("slow-time length does not match pulse_times")
        if len(self.pulse_times) > 1 and not np.all(np.diff(self.pulse_times) > 0):
            raise ConfigError("pulse_times must be strictly increasing")

    @property
    def num_fast(self) -> int:
        return self.samples.shape[0]

    @property
    def num_pulses(self) -> int:
        return self.samples.shape[1]

    @property
    def num_channels(self) -> int:
        return self.samples.shape[2]

    @property
    def pri(self) -> float:
        return float(np.mean(np.diff(self.pulse_times))) if self.num_pulses > 1 else 0.0

    @property
    def range_bin_spacing(self) -> float:
        return SPEED_OF_LIGHT / (2.0 * self.sample_rate)

    def with_samples(self, samples: np.ndarray, **changes) -> "PulseMatrix":
        return replace(self, samples=samples, **changes)


@dataclass
class Scene:
    targets: list[TargetSpec] = field(default_factory=list)
    clutter: list[ClutterScatterer] = field(default_factory=list)
    impairments: ImpairmentConfig = field(default_factory=ImpairmentConfig)
    seed: int = 0
    num_range_bins: int = 1024
    noise_power: float = 1.0
    add_noise: bool = True
    noise_only: bool = False

    def __post_init__(self):
        if self.num_range_bins < 1:
            raise ConfigError("num_range_bins must be positive")
        if not self.noise_power > 0:
            raise ConfigError("noise_power must be positive")


def delay_samples(range_m: float, sample_rate: float) -> float:
    return 2.0 * range_m / SPEED_OF_LIGHT * sample_rate


def clutter_cnr_from_rcs(link: LinkParams, range_m: float, rcs: float, fft_size: int) -> float:
    """Per-sample CNR (dB) of a static reflector, via the single-symbol radar equation."""
    return lin_to_db(per_pulse_snr(link, range_m, rcs) / fft_size)


def apply_saturation(samples: np.ndarray, level: float) -> np.ndarray:
    """Soft limiter ``|y| = level * tanh(|x| / level)`` with phase preserved."""
    if not level > 0:
        raise ConfigError("saturation level must be positive")
    x = np.asarray(samples)
    mag = np.abs(x)
    gain = np.ones_like(mag)
    nz = mag > 0
    gain[nz] = level * np.tanh(mag[nz] / level) / mag[nz]
    return x * gain


def ar1_sequence(rng: np.random.Generator, n: int, std: float, rho: float) -> np.ndarray:
    """Stationary first-order autoregressive sequence with marginal std ``std``."""
    if std == 0:
        return np.zeros(n)
    w = rng.standard_normal(n) * std * math.sqrt(1.0 - rho * rho)
    x0 = rng.standard_normal() * std
    out, _ = lfilter([1.0], [1.0, -rho], w, zi=[rho * x0])
    return out


def nco_phase(cycles_per_pulse: float, cycles_at_start: float, n: int) -> np.ndarray:
    """Phase (rad) of a fixed-point accumulator advancing ``cycles_per_pulse`` each pulse.

    Only the fractional cycle count matters, so velocities differing by a
    whole number of Doppler ambiguities give bit-identical phases.
    """
    step = int(round((cycles_per_pulse % 1.0) * _NCO_MOD)) % _NCO_MOD
    start = int(round((cycles_at_start % 1.0) * _NCO_MOD)) % _NCO_MOD
    acc = (start + step * np.arange(n, dtype=np.uint64)) % _NCO_MOD
    return 2.0 * np.pi * acc.astype(np.float64) / _NCO_MOD


def delayed_symbol(symbol: BasebandSymbol, delay: float, length: int) -> np.ndarray:
    """CP + useful part delayed by ``delay`` samples inside a window of ``length`` samples.

    The fractional part is applied on the subcarrier grid so the copy stays
    band-limited; the integer part positions the symbol in the window.
    """
    n = symbol.fft_size
    d_int = int(math.floor(delay))
    frac = delay - d_int
    if frac:
        k = np.fft.fftfreq(n, d=1.0 / n)
        useful = np.fft.ifft(symbol.freq_domain * np.exp(-2j * np.pi * k * frac / n), norm="ortho")
    else:
        useful = symbol.useful
    cp = symbol.cp_len
    sym = np.concatenate([useful[n - cp:], useful]) if cp else useful
    out = np.zeros(length, dtype=complex)
    out[d_int:d_int + sym.size] = sym
    return out


def _scatterers(scene: Scene, link: LinkParams, fft_size: int):
    """(range, velocity, per-sample amplitude, azimuth) for every scatterer."""
    rows = []
    for t in scene.targets:
        snr_sample = per_pulse_snr(link, t.range, t.rcs) / fft_size
        rows.append((t.range, t.radial_velocity, math.sqrt(snr_sample * scene.noise_power), t.azimuth))
    for cl in scene.clutter:
        rows.append((cl.range, 0.0, math.sqrt(db_to_lin(cl.cnr_db) * scene.noise_power), cl.azimuth))
    return rows


def simulate_cpi(
    scene: Scene,
    numerology: Numerology,
    schedule: SensingSchedule,
    symbol: BasebandSymbol,
    link: LinkParams,
    array: RxArray = RxArray(),
) -> PulseMatrix:
    if not (scene.targets or scene.clutter or scene.noise_only):
        raise ConfigError("scene has no targets or clutter; set noise_only for a pure-noise run")
    fs = numerology.sample_rate
    n_fft = symbol.fft_size
    window = scene.num_range_bins + symbol.cp_len + n_fft - 1
    pulses = schedule.pulses_per_cpi
    times = pulse_times(numerology, schedule)
    pri = schedule.pri
    lam = link.wavelength

    noise_ss, phase_ss, amp_ss = np.random.SeedSequence(scene.seed).spawn(3)
    rows = _scatterers(scene, link, n_fft)

    echo = np.zeros((window, pulses, array.num_channels), dtype=complex)
    if rows:
        waves = np.empty((window, len(rows)), dtype=complex)
        slow = np.empty((len(rows), pulses, array.num_channels), dtype=complex)
        for i, (rng_m, vel, amp, az) in enumerate(rows):
            d = delay_samples(rng_m, fs)
            if int(math.floor(d)) >= scene.num_range_bins:
                raise RangeBeyondWindow(
                    f"scatterer at {rng_m} m needs delay bin {d:.1f} >= window {scene.num_range_bins}"
                )
            waves[:, i] = amp * delayed_symbol(symbol, d, window)
            # Two-way phase -4 pi R / lambda, advanced per pulse by the range rate.
            phase = nco_phase(-2.0 * vel * pri / lam, -2.0 * rng_m / lam, pulses)
            slow[i] = np.exp(1j * phase)[:, None] * array.steering(az)[0][None, :]
        echo = (waves @ slow.reshape(len(rows), -1)).reshape(window, pulses, array.num_channels)

    imp = scene.impairments
    theta = ar1_sequence(np.random.default_rng(phase_ss), pulses, imp.phase_jitter_std, imp.jitter_correlation)
    a = ar1_sequence(np.random.default_rng(amp_ss), pulses, imp.amplitude_jitter_std, imp.jitter_correlation)
    if imp.phase_jitter_std or imp.amplitude_jitter_std:
        echo *= (np.exp(1j * theta) * (1.0 + a))[None, :, None]

    total = echo
    if scene.add_noise:
        rng = np.random.default_rng(noise_ss)
        shape = (window, pulses, array.num_channels)
        noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        total = echo + noise * math.sqrt(scene.noise_power / 2.0)

    if imp.saturation_enabled:
        strongest = max((r[2] for r in rows[len(scene.targets):]), default=None)
        if strongest is None:
            strongest = max((r[2] for r in rows), default=math.sqrt(scene.noise_power))
        total = apply_saturation(total, strongest * 10.0 ** (imp.saturation_level_db / 20.0))

    return PulseMatrix(total, fs, times, Origin.RAW, symbol.cp_len, lam)


def default_tx_level_db(link: LinkParams, numerology: Numerology) -> float:
    """Transmit power over the per-sample receiver noise power, in dB."""
    noise = link.boltzmann * link.temperature * numerology.sample_rate * db_to_lin(link.loss_noise_figure)
    return lin_to_db(link.transmit_power / noise)


def inject_direct_path(
    matrix: PulseMatrix,
    symbol: BasebandSymbol,
    isolation_db: float = 90.0,
    tx_level_db: float = 125.0,
    noise_power: float = 1.0,
) -> PulseMatrix:
    """Add a zero-delay, zero-Doppler leakage copy of the transmit symbol.

    Leakage per-sample power sits ``tx_level_db - isolation_db`` above the
    noise floor. ``isolation_db = +inf`` returns the matrix unchanged.
    """
    if math.isnan(isolation_db) or isolation_db == -math.inf:
        raise ConfigError("isolation_db must be a number or +inf")
    if isolation_db == math.inf:
        return matrix
    amp = math.sqrt(db_to_lin(tx_level_db - isolation_db) * noise_power)
    leak = amp * delayed_symbol(symbol, 0.0, matrix.num_fast)
    return matrix.with_samples(matrix.samples + leak[:, None, None])
