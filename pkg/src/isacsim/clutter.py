"""Clutter cancellation: slow-time NLMS predictor-canceller, MTI, CNR diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionMismatch, Diverged, TooFewPulses, WrongOrigin
from .rdproc import RangeDopplerMap
from .scene import Origin, PulseMatrix

DIVERGENCE_DB = 10.0


@dataclass(frozen=True)
class NlmsConfig:
    """Predictor settings.

    ``clutter_gate_db`` restricts adaptation to cells whose training segment
    is dominated by a steady component (|mean|^2 / variance at or above the
    gate). Cells below it keep zero coefficients and pass unchanged, so
    noise-only or target-only cells are never whitened. ``-inf`` adapts
    every cell.
    """

    filter_order: int = 8
    step_size: float = 0.5
    regularization: float = 1e-6
    training_pulses: int = 64
    clutter_gate_db: float = 20.0

    def __post_init__(self):
        if self.filter_order < 1:
            raise ConfigError("filter_order must be at least 1")
        if not 0 < self.step_size < 2:
            raise ConfigError("step_size must lie in (0, 2)")
        if not self.regularization > 0:
            raise ConfigError("regularization must be positive")
        if self.training_pulses < self.filter_order + 1:
            raise ConfigError("training_pulses must exceed filter_order")
        if math.isnan(self.clutter_gate_db):
            raise ConfigError("clutter_gate_db must be a number")


@dataclass
class NlmsState:
    coefficients: np.ndarray  # [range, channel, L]
    converged: bool
    residual_power_history: np.ndarray
    active: np.ndarray  # [range, channel] cells that were adapted

    @property
    def filter_order(self) -> int:
        return self.coefficients.shape[2]


def steady_ratio_db(x: np.ndarray) -> np.ndarray:
    """|mean|^2 / variance along the last axis, in dB (inf for a perfectly steady cell)."""
    m = np.abs(x.mean(axis=-1)) ** 2
    v = x.var(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(v > 0, m / np.where(v > 0, v, 1.0), np.where(m > 0, np.inf, 0.0))
        return 10.0 * np.log10(r)


def nlms_train(matrix: PulseMatrix, cfg: NlmsConfig = NlmsConfig(), backend: str | None = None) -> NlmsState:
    if matrix.origin is not Origin.COMPRESSED:
        raise WrongOrigin(f"nlms_train needs compressed data, got {matrix.origin.value}")
    if matrix.num_pulses < cfg.training_pulses:
        raise TooFewPulses(f"{matrix.num_pulses} pulses < {cfg.training_pulses} training pulses")
    nr, _, nc = matrix.samples.shape
    seg = matrix.samples[:, :cfg.training_pulses, :]
    x = np.ascontiguousarray(np.transpose(seg, (0, 2, 1)).reshape(nr * nc, -1))
    active = (steady_ratio_db(x) >= cfg.clutter_gate_db) & np.any(x != 0, axis=1)
    w = np.zeros((nr * nc, cfg.filter_order), dtype=complex)
    history = kernels.nlms_train(x, w, cfg.filter_order, cfg.step_size, cfg.regularization, active, backend)

    if not np.all(np.isfinite(w)) or not np.all(np.isfinite(history)):
        raise Diverged("NLMS produced non-finite coefficients")
    converged = True
    if active.any() and history.size >= 2:
        k = max(1, min(cfg.filter_order, history.size // 4))
        start, end = history[:k].mean(), history[-k:].mean()
        if start > 0 and end > start * 10 ** (DIVERGENCE_DB / 10):
            raise Diverged(f"residual power grew by {10 * np.log10(end / start):.1f} dB during training")
        converged = end <= start
    return NlmsState(w.reshape(nr, nc, -1), converged, history, active.reshape(nr, nc))


def nlms_apply(matrix: PulseMatrix, state: NlmsState) -> PulseMatrix:
    """Prediction residual with frozen coefficients; the first L pulses are zeroed."""
    if matrix.origin is not Origin.COMPRESSED:
        raise WrongOrigin(f"nlms_apply needs compressed data, got {matrix.origin.value}")
    nr, ns, nc = matrix.samples.shape
    w = state.coefficients
    if w.shape[:2] != (nr, nc):
        raise DimensionMismatch(f"state is for {w.shape[:2]} cells, data has {(nr, nc)}")
    order = w.shape[2]
    if ns <= order:
        raise TooFewPulses(f"{ns} pulses cannot fill a length-{order} predictor")
    x = matrix.samples
    out = np.zeros_like(x)
    out[:, order:, :] = x[:, order:, :]
    wc = np.conj(w)
    for lag in range(1, order + 1):
        out[:, order:, :] -= wc[:, None, :, lag - 1] * x[:, order - lag:ns - lag, :]
    return matrix.with_samples(out, origin=Origin.CANCELLED, valid_from=max(matrix.valid_from, order))


def mti_cancel(matrix: PulseMatrix, order: int = 1) -> PulseMatrix:
    """Binomial pulse canceller; slow time shrinks by ``order`` pulses."""
    if order < 1:
        raise ConfigError("MTI order must be at least 1")
    x = matrix.samples[:, matrix.valid_from:, :]
    if x.shape[1] <= order:
        raise TooFewPulses(f"{x.shape[1]} valid pulses, MTI order {order}")
    y = np.diff(x, n=order, axis=1)
    times = np.asarray(matrix.pulse_times)[matrix.valid_from + order:]
    return matrix.with_samples(y, pulse_times=times, origin=Origin.CANCELLED, valid_from=0)


def mti_response(freq_hz, pri: float, order: int = 1) -> np.ndarray:
    """Magnitude response ``|2 sin(pi f PRI)|^order``."""
    return np.abs(2.0 * np.sin(np.pi * np.asarray(freq_hz) * pri)) ** order


def cnr_estimate(rd: RangeDopplerMap, clutter_band: int = 0, guard: int | None = None) -> np.ndarray:
    """Per range cell: mean power within ``clutter_band`` bins of DC over the mean beyond ``guard`` bins (dB)."""
    if clutter_band < 0:
        raise ConfigError("clutter_band must be non-negative")
    guard = clutter_band + 2 if guard is None else guard
    if guard < clutter_band:
        raise ConfigError("guard must not be smaller than clutter_band")
    offset = np.abs(np.arange(rd.num_doppler) - rd.zero_doppler_bin)
    inside = offset <= clutter_band
    outside = offset > guard
    if not outside.any():
        raise ConfigError("guard leaves no Doppler bins for the noise reference")
    with np.errstate(divide="ignore", invalid="ignore"):
        return 10.0 * np.log10(rd.power[:, inside].mean(axis=1) / rd.power[:, outside].mean(axis=1))


def cell_power_ratio_db(rd: RangeDopplerMap, cells, reference_cells) -> float:
    """Mean map power over range ``cells`` relative to the mean over ``reference_cells`` (dB).

    With clutter cells against clutter-free cells this is the clutter (or
    clutter residue) to noise ratio of a whole map.
    """
    cells = np.asarray(list(cells), dtype=int)
    ref = np.asarray(list(reference_cells), dtype=int)
    if cells.size == 0 or ref.size == 0:
        raise ConfigError("need at least one cell and one reference cell")
    return float(10.0 * np.log10(rd.power[cells].mean() / rd.power[ref].mean()))


def residual_history_csv(state: NlmsState) -> str:
    lines = ["iteration,residual_power"]
    lines += [f"{i},{p:.9e}" for i, p in enumerate(state.residual_power_history)]
    return "\n".join(lines) + "\n"
