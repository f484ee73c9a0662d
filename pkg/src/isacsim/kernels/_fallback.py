"""Pure-numpy implementations of the hot loops."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate


def nlms_train(x: np.ndarray, w: np.ndarray, order: int, mu: float, eps: float,
               active: np.ndarray) -> np.ndarray:
    """Run the NLMS one-step predictor over slow time, in place on ``w``.

    ``x`` is [cells, pulses] complex, ``w`` is [cells, order] complex and
    ``active`` a boolean mask of cells to adapt. Returns the per-iteration
    mean squared prediction error over active cells.
    """
    cells, pulses = x.shape
    history = np.zeros(max(pulses - order, 0))
    if not active.any():
        return history
    xa = x[active]
    wa = w[active]
    for n in range(order, pulses):
        u = xa[:, n - order:n][:, ::-1]  # x_{n-1}, ..., x_{n-L}
        e = xa[:, n] - np.einsum("cl,cl->c", wa.conj(), u)
        norm = eps + np.einsum("cl,cl->c", u.conj(), u).real
        wa += (mu / norm * e.conj())[:, None] * u
        history[n - order] = np.mean(np.abs(e) ** 2)
    w[active] = wa
    return history


def cfar_noise_level(power: np.ndarray, guard_r: int, guard_d: int, train_r: int, train_d: int) -> np.ndarray:
    """Mean of the training ring around each cell.

    Doppler wraps circularly; range positions whose window would leave the
    map are NaN.
    """
    hr, hd = guard_r + train_r, guard_d + train_d
    ring = np.ones((2 * hr + 1, 2 * hd + 1))
    ring[train_r:train_r + 2 * guard_r + 1, train_d:train_d + 2 * guard_d + 1] = 0.0
    nr = power.shape[0]
    out = np.full(power.shape, np.nan)
    if nr <= 2 * hr:
        return out
    padded = np.pad(power, ((0, 0), (hd, hd)), mode="wrap")
    sums = correlate(padded, ring, mode="constant", cval=0.0)
    out[hr:nr - hr] = sums[hr:nr - hr, hd:hd + power.shape[1]] / ring.sum()
    return out
