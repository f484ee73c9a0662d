"""Curve-fitting / peak-separation detection against a learned clutter region.

Clutter-only peaks are mapped to feature vectors (location, amplitude dB,
width), normalised per axis, trimmed by the target false-alarm rate and
enclosed by concave hulls. At test time a peak outside the region whose
location also clears the zero-Doppler guard is declared a target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from ..errors import ConfigError, DegenerateGeometry, NoPeaksFound, TooFewSamples
from ..rdproc import RangeDopplerMap
from .cfar import Detection, DetectorKind
from .hull import concave_hull, outside_distance
from .peaks import PeakFeatures, extract_peak_features

MIN_TRAINING = 200
FORMAT_TAG = "isacsim-clutter-region"
FORMAT_VERSION = 1
# Projections of (location, amplitude, width) used in "full" mode.
PROJECTIONS = {"location_amplitude": (0, 1), "location_width": (0, 2)}


@dataclass
class ClutterRegion:
    """Learned clutter decision region in normalised feature coordinates.

    ``margin`` widens the region uniformly; it is calibrated on held-out
    clutter so that the fresh-sample exceedance rate tracks ``trained_pfa``.
    """

    mode: str  # "full" or "location"
    offset: np.ndarray  # per-feature affine normalisation: z = (f - offset) / scale
    scale: np.ndarray
    concavity: int | None
    trained_pfa: float
    margin: float = 0.0
    hulls: dict[str, np.ndarray] = field(default_factory=dict)
    interval: tuple[float, float] = (0.0, 0.0)  # normalised location extent

    def normalize(self, vectors: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(vectors) - self.offset) / self.scale

    def excess(self, normalized: np.ndarray) -> np.ndarray:
        """Distance outside the (un-margined) region for normalised feature rows."""
        z = np.atleast_2d(normalized)
        lo, hi = self.interval
        d = np.maximum(np.maximum(lo - z[:, 0], z[:, 0] - hi), 0.0)
        if self.mode == "full":
            for name, (i, j) in PROJECTIONS.items():
                d = np.maximum(d, outside_distance(self.hulls[name], z[:, [i, j]]))
        return d

    def contains_normalized(self, normalized: np.ndarray) -> np.ndarray:
        return self.excess(normalized) <= self.margin

    def contains(self, features: Iterable[PeakFeatures] | np.ndarray) -> np.ndarray:
        return self.contains_normalized(self.normalize(_as_vectors(features)))

    def location_extent(self) -> tuple[float, float]:
        """Physical location interval covered by the region (margin included)."""
        lo, hi = self.interval
        return (self.offset[0] + (lo - self.margin) * self.scale[0],
                self.offset[0] + (hi + self.margin) * self.scale[0])

    def to_text(self) -> str:
        lines = [
            f"{FORMAT_TAG} v{FORMAT_VERSION}",
            f"mode {self.mode}",
            f"concavity {'none' if self.concavity is None else self.concavity}",
            f"trained_pfa {self.trained_pfa!r}",
            f"margin {self.margin!r}",
            "offset " + " ".join(repr(float(v)) for v in self.offset),
            "scale " + " ".join(repr(float(v)) for v in self.scale),
            f"interval {self.interval[0]!r} {self.interval[1]!r}",
        ]
        for name, poly in self.hulls.items():
            lines.append(f"hull {name} {len(poly)}")
            lines += [f"{float(x)!r} {float(y)!r}" for x, y in poly]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ClutterRegion":
        lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        head = lines[0].split()
        if len(head) != 2 or head[0] != FORMAT_TAG:
            raise ConfigError("not a clutter-region file")
        if head[1] != f"v{FORMAT_VERSION}":
            raise ConfigError(f"unsupported clutter-region version {head[1]}")
        values: dict[str, list[str]] = {}
        hulls: dict[str, np.ndarray] = {}
        i = 1
        while i < len(lines):
            parts = lines[i].split()
            if parts[0] == "hull":
                count = int(parts[2])
                rows = [list(map(float, ln.split())) for ln in lines[i + 1:i + 1 + count]]
                hulls[parts[1]] = np.array(rows)
                i += 1 + count
            else:
                values[parts[0]] = parts[1:]
                i += 1
        conc = values["concavity"][0]
        return cls(
            mode=values["mode"][0],
            offset=np.array(list(map(float, values["offset"]))),
            scale=np.array(list(map(float, values["scale"]))),
            concavity=None if conc == "none" else int(conc),
            trained_pfa=float(values["trained_pfa"][0]),
            margin=float(values["margin"][0]),
            hulls=hulls,
            interval=(float(values["interval"][0]), float(values["interval"][1])),
        )


def _as_vectors(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        return np.atleast_2d(features).astype(float)
    rows = [f.vector() for f in features]
    return np.array(rows, dtype=float).reshape(-1, 3)


def _trim(z: np.ndarray, pfa: float, mode: str) -> np.ndarray:
    """Drop the ``pfa`` fraction of rows farthest from the centroid."""
    cols = [0] if mode == "location" else [0, 1, 2]
    dist = np.linalg.norm(z[:, cols] - z[:, cols].mean(axis=0), axis=1)
    drop = int(math.floor(pfa * len(z)))
    if drop == 0:
        return z
    keep = np.argsort(dist, kind="stable")[:len(z) - drop]
    return z[np.sort(keep)]


def _build(z: np.ndarray, mode: str, concavity: int | None):
    interval = (float(z[:, 0].min()), float(z[:, 0].max()))
    hulls = {}
    if mode == "full":
        for name, (i, j) in PROJECTIONS.items():
            hulls[name] = concave_hull(z[:, [i, j]], concavity)
    return interval, hulls


def learn_clutter_region(
    training_features: Iterable[PeakFeatures] | np.ndarray,
    pfa: float = 0.01,
    concavity: int | None = 8,
    mode: str = "full",
    calibrate: bool = True,
) -> ClutterRegion:
    """Fit the clutter decision region to clutter-only peak features.

    With ``calibrate`` the region is widened by a margin chosen on two-fold
    held-out data: each half's hull is tested on the other half and the
    margin is the (1 - pfa) quantile of the held-out excess distances.
    Hulls from half the data are smaller than the final one, so the margin
    errs on the conservative side.
    """
    if mode not in ("full", "location"):
        raise ConfigError(f"unknown clutter-region mode {mode!r}")
    if not 0 <= pfa < 1:
        raise ConfigError("pfa must lie in [0, 1)")
    f = _as_vectors(training_features)
    if len(f) < MIN_TRAINING:
        raise TooFewSamples(f"{len(f)} training peaks, need at least {MIN_TRAINING}")
    offset = f.mean(axis=0)
    scale = f.std(axis=0)
    used = [0] if mode == "location" else [0, 1, 2]
    if np.any(scale[used] <= 0):
        raise DegenerateGeometry("a feature is constant over the training set")
    scale = np.where(scale > 0, scale, 1.0)
    z = (f - offset) / scale

    region = ClutterRegion(mode, offset, scale, concavity, pfa)
    region.interval, region.hulls = _build(_trim(z, pfa, mode), mode, concavity)

    if calibrate and pfa > 0:
        halves = (z[0::2], z[1::2])
        excess = []
        for fit, held in (halves, halves[::-1]):
            probe = ClutterRegion(mode, offset, scale, concavity, pfa)
            probe.interval, probe.hulls = _build(_trim(fit, pfa, mode), mode, concavity)
            excess.append(probe.excess(held))
        region.margin = float(np.quantile(np.concatenate(excess), 1.0 - pfa))
    return region


def map_peak_features(
    rd: RangeDopplerMap,
    range_bins: Iterable[int] | None = None,
    smoothing: int = 3,
    poly_order: int = 2,
    significance: float | None = 1e-3,
) -> dict[int, list[PeakFeatures]]:
    """Peak features (location and width in Hz) for each range cell that has peaks."""
    axis = rd.doppler_axis_hz
    cells = range(rd.shape[0]) if range_bins is None else range_bins
    out = {}
    for r in cells:
        try:
            out[int(r)] = extract_peak_features(rd.power[r], smoothing, poly_order, axis, significance)
        except NoPeaksFound:
            continue
    return out


def cfps_detect(
    features_per_cell: dict[int, list[PeakFeatures]],
    region: ClutterRegion,
    zero_doppler_guard: float,
    rd: RangeDopplerMap | None = None,
) -> list[Detection]:
    """One detection per range cell: its strongest peak lying outside the clutter region.

    ``score`` is the absolute peak location (Hz), the primary test statistic.
    """
    out = []
    for r, peaks in sorted(features_per_cell.items()):
        if not peaks:
            continue
        inside = region.contains(peaks)
        hits = [p for p, ok in zip(peaks, inside) if not ok and abs(p.location) > zero_doppler_guard]
        if not hits:
            continue
        best = max(hits, key=lambda p: p.amplitude)
        if rd is not None:
            rng_m = float(rd.range_axis[r])
            vel = best.location * rd.wavelength / 2.0
        else:
            rng_m, vel = float("nan"), float("nan")
        out.append(Detection(int(r), int(best.bin), rng_m, vel, abs(best.location), DetectorKind.CFPS_CFAR))
    return out
