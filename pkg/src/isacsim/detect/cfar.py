"""Two-dimensional cell-averaging CFAR on range-Doppler power maps."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from .. import kernels
from ..errors import ConfigError, WindowTooLarge
from ..rdproc import RangeDopplerMap


class DetectorKind(enum.Enum):
    CA_CFAR = "ca_cfar"
    CFPS_CFAR = "cfps_cfar"


@dataclass(frozen=True)
class Detection:
    range_bin: int
    doppler_bin: int
    range_m: float
    velocity_mps: float
    score: float
    detector: DetectorKind


@dataclass(frozen=True)
class CfarConfig:
    guard_cells: tuple[int, int] = (2, 2)  # (range, doppler) half-widths
    training_cells: tuple[int, int] = (2, 4)
    pfa: float = 1e-3

    def __post_init__(self):
        if not 0 < self.pfa < 1:
            raise ConfigError("pfa must lie in (0, 1)")
        if min(self.guard_cells) < 0 or min(self.training_cells) < 0:
            raise ConfigError("guard and training half-widths must be non-negative")
        if self.num_training < 8:
            raise ConfigError(f"only {self.num_training} training cells; need at least 8")

    @property
    def half_window(self) -> tuple[int, int]:
        return (self.guard_cells[0] + self.training_cells[0], self.guard_cells[1] + self.training_cells[1])

    @property
    def num_training(self) -> int:
        hr, hd = self.half_window
        gr, gd = self.guard_cells
        return (2 * hr + 1) * (2 * hd + 1) - (2 * gr + 1) * (2 * gd + 1)

    @property
    def alpha(self) -> float:
        return threshold_multiplier(self.num_training, self.pfa)


def threshold_multiplier(num_training: int, pfa: float) -> float:
    """CA-CFAR scale factor for exponential (square-law) backgrounds."""
    return num_training * (pfa ** (-1.0 / num_training) - 1.0)


def cfar_statistic(power: np.ndarray, cfg: CfarConfig, backend: str | None = None) -> np.ndarray:
    """Cell power over the training-ring mean; NaN where the window leaves the range axis."""
    power = np.asarray(power, dtype=float)
    hr, hd = cfg.half_window
    if power.shape[0] < 2 * hr + 1 or power.shape[1] < 2 * hd + 1:
        raise WindowTooLarge(f"CFAR window {(2 * hr + 1, 2 * hd + 1)} exceeds map {power.shape}")
    noise = kernels.cfar_noise_level(power, cfg.guard_cells[0], cfg.guard_cells[1],
                                     cfg.training_cells[0], cfg.training_cells[1], backend)
    stat = np.full(power.shape, np.nan)
    valid = np.isfinite(noise)
    p, n = power[valid], noise[valid]
    with np.errstate(divide="ignore", invalid="ignore"):
        stat[valid] = np.where(n > 0, p / n, np.where(p > 0, np.inf, 0.0))
    return stat


def cfar_mask(power: np.ndarray, cfg: CfarConfig, backend: str | None = None) -> np.ndarray:
    """Threshold crossings (no peak grouping); cells without a full window are False."""
    stat = cfar_statistic(power, cfg, backend)
    with np.errstate(invalid="ignore"):
        return stat > cfg.alpha


def ca_cfar_2d(rd: RangeDopplerMap, cfg: CfarConfig = CfarConfig(), backend: str | None = None) -> list[Detection]:
    """Threshold crossings that are also 3x3 local maxima (Doppler wraps)."""
    stat = cfar_statistic(rd.power, cfg, backend)
    with np.errstate(invalid="ignore"):
        hits = stat > cfg.alpha
    peaks = rd.power >= maximum_filter(rd.power, size=3, mode=("nearest", "wrap"))
    out = []
    for r, d in zip(*np.nonzero(hits & peaks)):
        out.append(Detection(int(r), int(d), float(rd.range_axis[r]), float(rd.velocity_axis[d]),
                             float(stat[r, d]), DetectorKind.CA_CFAR))
    return out
