"""Pulse compression, slow-time Doppler processing and SNR estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve, get_window

from .errors import ConfigError, TooFewNoiseCells, WrongOrigin
from .scene import Origin, PulseMatrix, RxArray

ZERO_DOPPLER_GUARD = 2  # bins either side of DC left out of noise estimates
MIN_NOISE_CELLS = 100


@dataclass
class RangeDopplerMap:
    """Power map [range_bin, doppler_bin] with zero Doppler at index ``num_doppler // 2``.

    Power is ``|sum_n w_n x_n e^{+j 2 pi k n / K}|^2`` without normalisation, so a
    tone of amplitude ``a`` peaks at ``a^2 (sum w)^2`` and white noise of
    variance ``s`` sits at ``s * sum w^2``.
    """

    power: np.ndarray
    range_axis: np.ndarray  # m
    velocity_axis: np.ndarray  # m/s
    channel: int | str = "combined"
    pri: float = 0.0
    wavelength: float = 0.0

    def __post_init__(self):
        if self.power.shape != (len(self.range_axis), len(self.velocity_axis)):
            raise ConfigError("axis lengths do not match the power matrix")

    @property
    def shape(self) -> tuple[int, int]:
        return self.power.shape

    @property
    def num_doppler(self) -> int:
        return self.power.shape[1]

    @property
    def zero_doppler_bin(self) -> int:
        return self.num_doppler // 2

    @property
    def doppler_axis_hz(self) -> np.ndarray:
        return 2.0 * self.velocity_axis / self.wavelength


def compression_valid_length(matrix: PulseMatrix, ref_len: int) -> int:
    return matrix.num_fast - matrix.cp_len - ref_len + 1


def pulse_compress(matrix: PulseMatrix, reference: np.ndarray) -> PulseMatrix:
    """CP-stripped correlation of every pulse and channel with ``reference``.

    ``reference`` is a matched filter (conjugate, time-reversed); output bin
    ``k`` holds the echo whose CP starts at fast-time sample ``k``.
    """
    if matrix.origin is not Origin.RAW:
        raise WrongOrigin(f"pulse_compress needs raw samples, got {matrix.origin.value}")
    ref = np.asarray(reference, dtype=complex)
    out_len = compression_valid_length(matrix, ref.size)
    if out_len < 1:
        raise ConfigError("receive window shorter than the reference")
    full = fftconvolve(matrix.samples, ref[:, None, None], mode="valid", axes=0)
    cp = matrix.cp_len
    return matrix.with_samples(full[cp:cp + out_len], origin=Origin.COMPRESSED)


def slow_time_window(kind: str, n: int) -> np.ndarray:
    if kind in ("rect", "rectangular", "boxcar", "none"):
        return np.ones(n)
    return get_window(kind, n, fftbins=True)


def doppler_spectrum(matrix: PulseMatrix, window: str = "hann", nfft: int | None = None) -> np.ndarray:
    """Complex Doppler spectra [range, doppler, channel], zero Doppler centred."""
    if matrix.origin not in (Origin.COMPRESSED, Origin.CANCELLED):
        raise WrongOrigin(f"doppler processing needs compressed data, got {matrix.origin.value}")
    x = matrix.samples[:, matrix.valid_from:, :]
    n = x.shape[1]
    if n < 2:
        raise ConfigError("fewer than two valid pulses")
    k = n if nfft is None else int(nfft)
    if k < n:
        raise ConfigError("nfft shorter than the number of pulses")
    w = slow_time_window(window, n)
    # Inverse DFT kernel: a receding target (negative phase slope) lands on a positive bin.
    spec = np.fft.ifft(x * w[None, :, None], n=k, axis=1) * k
    return np.fft.fftshift(spec, axes=1)


def velocity_axis(num_doppler: int, pri: float, wavelength: float) -> np.ndarray:
    f = (np.arange(num_doppler) - num_doppler // 2) / (num_doppler * pri)
    return f * wavelength / 2.0


def doppler_process(
    matrix: PulseMatrix,
    window: str = "hann",
    combine: str | int = "noncoherent",
    nfft: int | None = None,
    azimuth: float | None = None,
    array: RxArray | None = None,
) -> RangeDopplerMap:
    """Range-Doppler power map.

    ``combine`` is ``"noncoherent"`` (sum of channel powers), ``"coherent"``
    (beam steered to ``azimuth``, broadside by default) or a channel index.
    """
    spec = doppler_spectrum(matrix, window, nfft)
    if isinstance(combine, (int, np.integer)) and not isinstance(combine, bool):
        if not 0 <= combine < matrix.num_channels:
            raise ConfigError(f"channel {combine} out of range")
        power = np.abs(spec[:, :, combine]) ** 2
        label: int | str = int(combine)
    elif combine == "noncoherent":
        power = np.sum(np.abs(spec) ** 2, axis=2)
        label = "combined"
    elif combine == "coherent":
        arr = array if array is not None else RxArray(matrix.num_channels)
        if arr.num_channels != matrix.num_channels:
            raise ConfigError("array does not match the channel count")
        a = arr.steering(0.0 if azimuth is None else azimuth)[0]
        power = np.abs(spec @ np.conj(a)) ** 2 / matrix.num_channels
        label = "combined"
    else:
        raise ConfigError(f"unknown combining mode {combine!r}")
    ranges = np.arange(matrix.num_fast) * matrix.range_bin_spacing
    vel = velocity_axis(spec.shape[1], matrix.pri, matrix.wavelength)
    return RangeDopplerMap(power, ranges, vel, label, matrix.pri, matrix.wavelength)


def noise_cell_mask(rd: RangeDopplerMap, peak_cell: tuple[int, int], exclusion: int,
                    guard: int = ZERO_DOPPLER_GUARD) -> np.ndarray:
    r0, d0 = peak_cell
    nr, nd = rd.shape
    rr = np.arange(nr)[:, None]
    dd = np.arange(nd)[None, :]
    near_peak = (np.abs(rr - r0) <= exclusion) & (np.abs(dd - d0) <= exclusion)
    near_dc = np.abs(dd - rd.zero_doppler_bin) <= guard
    return ~(near_peak | near_dc)


def snr_estimate(rd: RangeDopplerMap, peak_cell: tuple[int, int], exclusion: int = 3,
                 guard: int = ZERO_DOPPLER_GUARD) -> float:
    """Peak power over the mean of cells away from the peak and the zero-Doppler guard band (dB)."""
    r0, d0 = peak_cell
    if not (0 <= r0 < rd.shape[0] and 0 <= d0 < rd.shape[1]):
        raise ConfigError(f"peak cell {peak_cell} outside map {rd.shape}")
    mask = noise_cell_mask(rd, peak_cell, exclusion, guard)
    if mask.sum() < MIN_NOISE_CELLS:
        raise TooFewNoiseCells(f"only {int(mask.sum())} noise cells remain")
    floor = rd.power[mask].mean()
    return float(10.0 * np.log10(rd.power[r0, d0] / floor))
