"""Compare the compiled kernels with the numpy fallback on desk-scale inputs.

Run: python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from isacsim import kernels


def nlms_case(rng, cells=256, pulses=256, order=8):
    x = rng.standard_normal((cells, pulses)) + 1j * rng.standard_normal((cells, pulses)) + 10.0
    active = np.ones(cells, dtype=bool)

    def run(backend):
        w = np.zeros((cells, order), dtype=complex)
        kernels.nlms_train(x, w, order, 0.5, 1e-6, active, backend=backend)
        return w

    return run


def cfar_case(rng, shape=(1024, 256)):
    p = rng.exponential(size=shape)

    def run(backend):
        return kernels.cfar_noise_level(p, 2, 2, 2, 4, backend=backend)

    return run


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = ["python"] + (["native"] if kernels._native is not None else [])
    print(f"{'kernel':<8} {'backend':<8} {'best ms':>10} {'speedup':>8}")
    for name, case in (("nlms", nlms_case(rng)), ("cfar", cfar_case(rng))):
        ref = case("python")
        base = None
        for b in backends:
            out = case(b)
            assert np.allclose(out, ref, rtol=1e-9, atol=1e-12, equal_nan=True), f"{name}: {b} disagrees with fallback"
            best = min(timeit.repeat(lambda: case(b), number=1, repeat=args.repeat))
            base = base or best
            print(f"{name:<8} {b:<8} {1e3 * best:>10.2f} {base / best:>8.1f}x")


if __name__ == "__main__":
    main()
