"""Compiled inner loop for NV-13C pulse propagators."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _matmul4(a, b, out):
    for i in range(4):
        for k in range(4):
            s = 0j
            for j in range(4):
                s += a[i, j] * b[j, k]
            out[i, k] = s


@njit(cache=True)
def _expm4(a, out, term, tmp):
    # exp(a) by scaling and squaring around a Taylor series
    norm = 0.0
    for i in range(4):
        row = 0.0
        for j in range(4):
            row += abs(a[i, j])
        if row > norm:
            norm = row
    squarings = 0
    while norm > 0.25:
        norm *= 0.5
        squarings += 1
    scale = 0.5**squarings
    for i in range(4):
        for j in range(4):
            a[i, j] *= scale
            out[i, j] = 1.0 + 0j if i == j else 0j
            term[i, j] = out[i, j]
    k = 1
    bound = norm
    while True:
        _matmul4(term, a, tmp)
        for i in range(4):
            for j in range(4):
                term[i, j] = tmp[i, j] / k
                out[i, j] += term[i, j]
        if bound / (k + 1) < 1e-17 or k >= 30:
            break
        k += 1
        bound *= norm / k
    for _ in range(squarings):
        _matmul4(out, out, tmp)
        for i in range(4):
            for j in range(4):
                out[i, j] = tmp[i, j]


@njit(cache=True)
def pulse_propagators(h_static, h_x, h_y, omega_x, omega_y, dt):
    """Ordered products prod_j exp(-2 pi i (h_static + ox_j h_x + oy_j h_y) dt).

    ``omega_x`` and ``omega_y`` have shape (B, N); returns (B, 4, 4).
    """
    nb, n = omega_x.shape
    out = np.empty((nb, 4, 4), dtype=np.complex128)
    a = np.empty((4, 4), dtype=np.complex128)
    e = np.empty((4, 4), dtype=np.complex128)
    term = np.empty((4, 4), dtype=np.complex128)
    tmp = np.empty((4, 4), dtype=np.complex128)
    acc = np.empty((4, 4), dtype=np.complex128)
    w = -2j * np.pi * dt
    for b in range(nb):
        for i in range(4):
            for j in range(4):
                acc[i, j] = 1.0 + 0j if i == j else 0j
        for s in range(n):
            ox = omega_x[b, s]
            oy = omega_y[b, s]
            for i in range(4):
                for j in range(4):
                    a[i, j] = w * (h_static[i, j] + ox * h_x[i, j] + oy * h_y[i, j])
            _expm4(a, e, term, tmp)
            _matmul4(e, acc, tmp)
            for i in range(4):
                for j in range(4):
                    acc[i, j] = tmp[i, j]
        for i in range(4):
            for j in range(4):
                out[b, i, j] = acc[i, j]
    return out
