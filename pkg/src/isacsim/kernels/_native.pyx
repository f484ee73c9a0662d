# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the slow-time NLMS recursion and the CA-CFAR ring mean."""

import numpy as np
cimport numpy as cnp
from libc.math cimport NAN

cnp.import_array()


def nlms_train(double complex[:, ::1] x, double complex[:, ::1] w, int order,
               double mu, double eps, cnp.uint8_t[::1] active):
    cdef Py_ssize_t cells = x.shape[0], pulses = x.shape[1]
    cdef Py_ssize_t c, n, l
    cdef Py_ssize_t steps = pulses - order if pulses > order else 0
    cdef double complex pred, e, g
    cdef double norm
    cdef Py_ssize_t n_active = 0
    history = np.zeros(steps)
    cdef double[::1] hist = history
    for c in range(cells):
        if not active[c]:
            continue
        n_active += 1
        for n in range(order, pulses):
            pred = 0
            norm = eps
            for l in range(order):
                pred = pred + w[c, l].conjugate() * x[c, n - 1 - l]
                norm = norm + x[c, n - 1 - l].real ** 2 + x[c, n - 1 - l].imag ** 2
            e = x[c, n] - pred
            g = mu / norm * e.conjugate()
            for l in range(order):
                w[c, l] = w[c, l] + g * x[c, n - 1 - l]
            hist[n - order] += e.real ** 2 + e.imag ** 2
    if n_active:
        for n in range(steps):
            hist[n] /= n_active
    return history


def cfar_noise_level(double[:, ::1] power, int guard_r, int guard_d, int train_r, int train_d):
    cdef Py_ssize_t nr = power.shape[0], nd = power.shape[1]
    cdef int hr = guard_r + train_r, hd = guard_d + train_d
    cdef Py_ssize_t r, d, i, j, dj
    cdef double total, inner
    cdef double count = (2 * hr + 1) * (2 * hd + 1) - (2 * guard_r + 1) * (2 * guard_d + 1)
    out_arr = np.full((nr, nd), np.nan)
    cdef double[:, ::1] out = out_arr
    # Per-row column sums over the outer and guard spans, reused along Doppler.
    cdef double[::1] col_outer = np.zeros(nd)
    cdef double[::1] col_inner = np.zeros(nd)
    for r in range(hr, nr - hr):
        for d in range(nd):
            total = 0
            for i in range(r - hr, r + hr + 1):
                total += power[i, d]
            col_outer[d] = total
            inner = 0
            for i in range(r - guard_r, r + guard_r + 1):
                inner += power[i, d]
            col_inner[d] = inner
        for d in range(nd):
            total = 0
            for j in range(-hd, hd + 1):
                dj = (d + j) % nd
                if dj < 0:
                    dj += nd
                total += col_outer[dj]
            inner = 0
            for j in range(-guard_d, guard_d + 1):
                dj = (d + j) % nd
                if dj < 0:
                    dj += nd
                inner += col_inner[dj]
            out[r, d] = (total - inner) / count
    return out_arr
