"""Doppler-spectrum peak search, curve fitting and one round of peak separation.

A spectrum is a real vector of linear powers over Doppler bins (treated as
circular). Peaks are found on a smoothed copy; each one is then described by
a least-squares polynomial fitted to the log-power around its apex:
amplitude (fitted apex, linear), location (apex abscissa) and width (span
between the fitted curve's -3 dB points).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

from ..errors import ConfigError, NoPeaksFound

MIN_SPECTRUM_LEN = 16
FIT_DROP_DB = 10.0  # fit region stops this far below the apex
HALF_POWER_DB = 10.0 * math.log10(2.0)
REFINE_ROUNDS = 4  # alternating refits after peak separation


@dataclass(frozen=True)
class PeakFeatures:
    amplitude: float  # linear power
    location: float  # Hz (or bins when no axis is given), signed
    width: float  # same unit as location
    bin: int  # apex bin index in the input spectrum
    separated: bool = False  # found only after subtracting the dominant peak

    def vector(self) -> np.ndarray:
        """(location, amplitude dB, width): the coordinates used by clutter regions."""
        return np.array([self.location, 10.0 * math.log10(self.amplitude), self.width])


@dataclass(frozen=True)
class PeakSearchConfig:
    smoothing: int = 3
    poly_order: int = 2
    # Probability that pure exponential noise yields a spurious peak; None keeps every candidate.
    significance: float | None = 1e-3
    separate: bool = True

    def __post_init__(self):
        if self.smoothing < 1 or self.smoothing % 2 == 0:
            raise ConfigError("smoothing must be a positive odd length")
        if self.poly_order < 2:
            raise ConfigError("poly_order must be at least 2")
        if self.significance is not None and not 0 < self.significance < 1:
            raise ConfigError("significance must lie in (0, 1)")


def smooth(spectrum: np.ndarray, length: int) -> np.ndarray:
    if length == 1:
        return spectrum.copy()
    half = length // 2
    padded = np.concatenate([spectrum[-half:], spectrum, spectrum[:half]])
    return np.convolve(padded, np.ones(length) / length, mode="valid")


def candidate_bins(s: np.ndarray) -> np.ndarray:
    """Bins where the first difference turns from rising to non-rising and the curvature is negative."""
    left = s - np.roll(s, 1)
    right = np.roll(s, -1) - s
    curvature = right - left
    return np.nonzero((left > 0) & (right <= 0) & (curvature < 0))[0]


def noise_floor(spectrum: np.ndarray) -> float:
    """Median-based mean of an exponential background."""
    return float(np.median(spectrum) / math.log(2.0))


def significance_threshold(spectrum: np.ndarray, significance: float | None) -> float:
    if significance is None:
        return 0.0
    # Union bound over bins for exponential noise: P(max > t mu) <= n exp(-t).
    return noise_floor(spectrum) * -math.log(significance / spectrum.size)


def _fit_region(logp: np.ndarray, apex: int, max_half: int) -> np.ndarray:
    """Symmetric circular offsets around ``apex`` over which both flanks keep descending."""
    n = logp.size
    top = logp[apex]
    reach = []
    for step in (-1, 1):
        prev = top
        k = 0
        while k < max_half:
            v = logp[(apex + step * (k + 1)) % n]
            if v > prev or top - v > FIT_DROP_DB:
                break
            prev = v
            k += 1
        reach.append(k)
    # Equal reach on both sides keeps a neighbouring shoulder from skewing the fit.
    half = max(min(reach), 1)
    return np.arange(-half, half + 1)


def _crossing(coef: np.ndarray, x0: float, level: float, lo: float, hi: float) -> float | None:
    """Nearest root of poly(x) = level on the side of x0 given by [lo, hi]."""
    c = coef.copy()
    c[0] -= level
    roots = P.polyroots(c)
    real = roots[np.abs(roots.imag) < 1e-9].real
    real = real[(real >= lo) & (real <= hi)]
    if real.size == 0:
        return None
    return float(real[np.argmin(np.abs(real - x0))])


def _raw_half_power_span(logp: np.ndarray, apex: int) -> float:
    n = logp.size
    level = logp[apex] - HALF_POWER_DB
    edges = []
    for step in (-1, 1):
        prev = logp[apex]
        k = 1
        while k < n:
            v = logp[(apex + step * k) % n]
            if v <= level:
                edges.append(k - 1 + (prev - level) / max(prev - v, 1e-300))
                break
            prev = v
            k += 1
        else:
            edges.append(n / 2.0)
    return float(sum(edges))


def fit_peak(spectrum: np.ndarray, apex: int, poly_order: int = 2) -> tuple[float, float, float]:
    """(amplitude, location in bins, width in bins) from a log-power polynomial fit."""
    n = spectrum.size
    with np.errstate(divide="ignore"):
        logp = 10.0 * np.log10(np.maximum(spectrum, np.finfo(float).tiny))
    offsets = _fit_region(logp, apex, n // 4)
    y = logp[(apex + offsets) % n]
    order = min(poly_order, offsets.size - 1)
    if order >= 2:
        coef = P.polyfit(offsets.astype(float), y, order)
        lo, hi = float(offsets[0]), float(offsets[-1])
        dcoef = P.polyder(coef)
        crit = P.polyroots(dcoef) if dcoef.size > 1 else np.array([])
        crit = crit[np.abs(crit.imag) < 1e-9].real
        crit = crit[(crit >= lo - 0.5) & (crit <= hi + 0.5)]
        crit = crit[P.polyval(crit, P.polyder(dcoef)) < 0] if crit.size else crit
        if crit.size:
            x0 = float(crit[np.argmax(P.polyval(crit, coef))])
            top = float(P.polyval(x0, coef))
            span = max(hi - lo, 1.0) * 4.0
            left = _crossing(coef, x0, top - HALF_POWER_DB, x0 - span, x0)
            right = _crossing(coef, x0, top - HALF_POWER_DB, x0, x0 + span)
            if left is not None and right is not None and right > left:
                return 10.0 ** (top / 10.0), (apex + x0) % n, right - left
    # Too few points or no concave apex: fall back to raw measurements.
    return float(spectrum[apex]), float(apex), _raw_half_power_span(logp, apex)


def _gaussian_model(n: int, amplitude: float, location: float, width: float) -> np.ndarray:
    d = (np.arange(n) - location + n / 2.0) % n - n / 2.0
    return amplitude * np.exp(-4.0 * math.log(2.0) * (d / width) ** 2)


def _peaks_in(spectrum: np.ndarray, searched: np.ndarray, threshold: float, cfg: PeakSearchConfig):
    found = []
    n = spectrum.size
    half = cfg.smoothing // 2
    for c in candidate_bins(searched):
        # Refine to the raw maximum near the smoothed candidate.
        window = (c + np.arange(-half, half + 1)) % n
        apex = int(window[np.argmax(spectrum[window])])
        if spectrum[apex] <= threshold:
            continue
        found.append((apex, *fit_peak(spectrum, apex, cfg.poly_order)))
    return found


def _remove(x: np.ndarray, peak: tuple, floor: float) -> np.ndarray:
    """Spectrum with the fitted model of ``peak`` subtracted, clipped at the noise floor."""
    _, amp, loc, width = peak
    return np.maximum(x - _gaussian_model(x.size, amp, loc, width), max(floor, np.finfo(float).tiny))


def _separate(x: np.ndarray, tagged: list, threshold: float, cfg: PeakSearchConfig) -> list:
    """Remove the dominant peak, search the residual once, then refine both fits."""
    floor = noise_floor(x)
    dominant = tagged[0][0]
    _, _, loc, width = dominant
    n = x.size
    residual = _remove(x, dominant, floor)
    new = []
    for p in _peaks_in(residual, smooth(residual, cfg.smoothing), threshold, cfg):
        dist = [abs((p[2] - q[0][2] + n / 2.0) % n - n / 2.0) for q in tagged]
        # Fit residue inside the dominant main lobe is not a separate component.
        if min(dist) > 1.0 and abs((p[2] - loc + n / 2.0) % n - n / 2.0) > width / 2.0:
            new.append(p)
    if not new:
        return tagged
    for _ in range(REFINE_ROUNDS):
        others = x
        for q in new:
            others = _remove(others, q, floor)
        dominant = (dominant[0], *fit_peak(others, dominant[0], cfg.poly_order))
        clean = _remove(x, dominant, floor)
        new = [(q[0], *fit_peak(clean, q[0], cfg.poly_order)) for q in new]
    return [(dominant, False)] + tagged[1:] + [(q, True) for q in new]


def extract_peak_features(
    spectrum: np.ndarray,
    smoothing: int = 3,
    poly_order: int = 2,
    axis: np.ndarray | None = None,
    significance: float | None = 1e-3,
    separate: bool = True,
) -> list[PeakFeatures]:
    """Peaks of one range cell's Doppler power spectrum, strongest first.

    ``axis`` gives the abscissa of every bin (uniform, e.g. Doppler Hz); without
    it locations and widths are in bins. Raises :class:`NoPeaksFound` when no
    candidate survives the significance gate.
    """
    cfg = PeakSearchConfig(smoothing, poly_order, significance, separate)
    x = np.asarray(spectrum, dtype=float)
    if x.ndim != 1 or x.size < MIN_SPECTRUM_LEN:
        raise ConfigError(f"spectrum must be 1-D with at least {MIN_SPECTRUM_LEN} bins")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ConfigError("spectrum must hold finite non-negative powers")
    n = x.size
    threshold = significance_threshold(x, cfg.significance)

    peaks = _peaks_in(x, smooth(x, cfg.smoothing), threshold, cfg)
    if not peaks:
        raise NoPeaksFound("no significant peak in spectrum")
    peaks.sort(key=lambda p: -p[1])
    tagged = [(p, False) for p in peaks]

    if cfg.separate:
        tagged = _separate(x, tagged, threshold, cfg)

    if axis is None:
        origin, step = 0.0, 1.0
    else:
        axis = np.asarray(axis, dtype=float)
        if axis.size != n:
            raise ConfigError("axis length does not match spectrum")
        origin, step = float(axis[0]), float(axis[1] - axis[0])
    out = []
    for (apex, amp, loc, width), sep in tagged:
        # Keep locations on the axis' own branch (centred spectra give signed values).
        if loc - apex > n / 2.0:
            loc -= n
        elif apex - loc > n / 2.0:
            loc += n
        out.append(PeakFeatures(amp, origin + step * loc, abs(step) * width, apex, sep))
    return out
