"""Hot loops with a compiled backend and a numpy fallback.

The compiled extension is used when it was built; set ``ISACSIM_KERNELS=python``
to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

try:
    from . import _native
except ImportError:  # extension not built
    _native = None

BACKEND = "native" if _native is not None and os.environ.get("ISACSIM_KERNELS", "") != "python" else "python"


def _impl(backend: str | None):
    name = backend or BACKEND
    if name == "native":
        if _native is None:
            raise RuntimeError("compiled kernels are not available")
        return _native
    return _fallback


def nlms_train(x, w, order, mu, eps, active, backend=None) -> np.ndarray:
    """Adapt ``w`` in place; see :func:`_fallback.nlms_train`."""
    impl = _impl(backend)
    if impl is _native:
        return _native.nlms_train(np.ascontiguousarray(x, dtype=np.complex128), w, int(order),
                                  float(mu), float(eps), np.ascontiguousarray(active, dtype=np.uint8))
    return _fallback.nlms_train(x, w, order, mu, eps, np.asarray(active, dtype=bool))


def cfar_noise_level(power, guard_r, guard_d, train_r, train_d, backend=None) -> np.ndarray:
    impl = _impl(backend)
    power = np.ascontiguousarray(power, dtype=np.float64)
    return impl.cfar_noise_level(power, int(guard_r), int(guard_d), int(train_r), int(train_d))
