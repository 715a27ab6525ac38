"""Small-dimension spin linear algebra.

Frequencies are ordinary frequencies in MHz and times are in microseconds, so
every propagator carries an explicit factor of 2*pi: U = exp(-2*pi*i*H*t).
All functions broadcast over leading axes.
"""

from __future__ import annotations

import numpy as np

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY2 = np.eye(2, dtype=complex)

_PAULI = {"x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z}


def pauli(axis: str) -> np.ndarray:
    """Return a copy of the Pauli matrix for ``axis`` in {"x", "y", "z"}."""
    try:
        return _PAULI[axis.lower()].copy()
    except KeyError:
        raise ValueError(f"unknown Pauli axis {axis!r}") from None


def rotation(theta: float, axis: str = "x") -> np.ndarray:
    """exp(-i theta sigma_axis / 2)."""
    return np.cos(theta / 2) * IDENTITY2 - 1j * np.sin(theta / 2) * pauli(axis)


def _su2(vx, vy, vz) -> np.ndarray:
    # exp(-i v.sigma/2) = cos(|v|/2) I - i sin(|v|/2)/|v| v.sigma
    vx, vy, vz = np.broadcast_arrays(
        np.asarray(vx, float), np.asarray(vy, float), np.asarray(vz, float)
    )
    theta = np.sqrt(vx * vx + vy * vy + vz * vz)
    c = np.cos(theta / 2)
    s_over = _sinc_half(theta)
    out = np.empty(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c - 1j * s_over * vz
    out[..., 1, 1] = c + 1j * s_over * vz
    out[..., 0, 1] = -s_over * (vy + 1j * vx)
    out[..., 1, 0] = s_over * (vy - 1j * vx)
    return out


def _sinc_half(theta):
    """sin(theta/2)/theta, finite at theta = 0."""
    theta = np.asarray(theta, float)
    small = theta < 1e-4
    safe = np.where(small, 1.0, theta)
    series = 0.5 - theta**2 / 48.0
    return np.where(small, series, np.sin(safe / 2) / safe)


def _sinc_half_prime_over(theta):
    """(d/dtheta)[sin(theta/2)/theta] / theta, finite at theta = 0."""
    theta = np.asarray(theta, float)
    small = theta < 1e-2
    safe = np.where(small, 1.0, theta)
    exact = (0.5 * np.cos(safe / 2) / safe - np.sin(safe / 2) / safe**2) / safe
    series = -1.0 / 24.0 + theta**2 / 960.0 - theta**4 / 107520.0
    return np.where(small, series, exact)


def step_unitary(delta, omega_x, omega_y, dt) -> np.ndarray:
    """Exact propagator of one piecewise-constant slice.

    Computes exp(-2*pi*i*(delta/2 sz + omega_x/2 sx + omega_y/2 sy)*dt) through
    the axis-angle identity. Arguments broadcast; the result has shape
    ``broadcast_shape + (2, 2)``.
    """
    dt = np.asarray(dt, float)
    if np.any(dt <= 0):
        raise ValueError("dt must be positive")
    w = 2 * np.pi * dt
    return _su2(w * np.asarray(omega_x), w * np.asarray(omega_y), w * np.asarray(delta))


def step_unitary_derivative(delta, omega_x, omega_y, dt, axis: str) -> np.ndarray:
    """Exact derivative of :func:`step_unitary` with respect to one drive amplitude.

    ``axis`` is "x" or "y" and selects omega_x or omega_y. This is the full
    derivative of the matrix exponential, not the first-order GRAPE estimate.
    """
    if axis not in ("x", "y"):
        raise ValueError("axis must be 'x' or 'y'")
    dt = np.asarray(dt, float)
    w = 2 * np.pi * dt
    vx, vy, vz = np.broadcast_arrays(
        w * np.asarray(omega_x, float), w * np.asarray(omega_y, float), w * np.asarray(delta, float)
    )
    theta = np.sqrt(vx * vx + vy * vy + vz * vz)
    s_over = _sinc_half(theta)
    ds_over = _sinc_half_prime_over(theta)
    vk = vx if axis == "x" else vy
    # U = cI - i s(v) v.sigma with s = sin(theta/2)/theta; dc/dv_k = -s v_k / 2
    dc = -0.5 * s_over * vk
    ds = ds_over * vk
    out = np.empty(theta.shape + (2, 2), dtype=complex)
    # d/dv_k of -i s (v.sigma) = -i (ds v.sigma + s sigma_k)
    ax = ds * vx + (s_over if axis == "x" else 0.0)
    ay = ds * vy + (s_over if axis == "y" else 0.0)
    az = ds * vz
    out[..., 0, 0] = dc - 1j * az
    out[..., 1, 1] = dc + 1j * az
    out[..., 0, 1] = -(ay + 1j * ax)
    out[..., 1, 0] = ay - 1j * ax
    return out * w[..., None, None] if np.ndim(w) else out * w


def hs_overlap(a: np.ndarray, b: np.ndarray) -> complex:
    """Hilbert-Schmidt inner product tr(a^dagger b)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[-2:] != b.shape[-2:]:
        raise ValueError(f"dimension mismatch: {a.shape[-2:]} vs {b.shape[-2:]}")
    return np.einsum("...ij,...ij->...", a.conj(), b)


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def is_unitary(u: np.ndarray, atol: float = 1e-12) -> bool:
    u = np.asarray(u)
    eye = np.eye(u.shape[-1])
    return bool(np.max(np.abs(dagger(u) @ u - eye)) <= atol)


def is_hermitian(h: np.ndarray, atol: float = 1e-12) -> bool:
    h = np.asarray(h)
    return bool(np.max(np.abs(h - dagger(h)), initial=0.0) <= atol)


def _taylor_degree(theta: float) -> int:
    # smallest m with theta^(m+1)/(m+1)! below double-precision resolution
    term, m = theta, 1
    while term / (m + 1) > 1e-17 and m < 30:
        m += 1
        term *= theta / m
    return m


def expm_hermitian(h: np.ndarray, scale: float | np.ndarray = 1.0, *, check: bool = True) -> np.ndarray:
    """exp(-i * scale * h) for Hermitian ``h`` (stacked matrices allowed).

    Scaling and squaring around a truncated Taylor series whose degree adapts
    to the scaled norm, evaluated by Paterson-Stockmeyer. Time slices of
    spin propagators have tiny norms, so this typically costs four batched
    matmuls per matrix and stays exact to double precision.
    """
    h = np.asarray(h, dtype=complex)
    if check and not is_hermitian(h):
        raise ValueError("matrix is not Hermitian")
    scale = np.asarray(scale, float)
    a = -1j * h * (scale[..., None, None] if scale.ndim else scale)
    norm = np.max(np.sum(np.abs(a), axis=-1), axis=-1)
    top = float(np.max(norm, initial=0.0))
    squarings = int(np.ceil(np.log2(top / 0.25))) if top > 0.25 else 0
    if squarings:
        a = a / 2.0**squarings
        top /= 2.0**squarings
    m = _taylor_degree(top)
    coef = [1.0]
    for k in range(1, m + 1):
        coef.append(coef[-1] / k)
    q = max(1, int(np.ceil(np.sqrt(m + 1))))
    eye = np.eye(h.shape[-1], dtype=complex)
    powers = [None, a]
    for _ in range(2, q + 1):
        powers.append(powers[-1] @ a)

    def chunk(lo):
        acc = coef[lo] * eye
        for k in range(1, q):
            if lo + k <= m:
                acc = acc + coef[lo + k] * powers[k]
        return acc

    starts = list(range(0, m + 1, q))
    result = chunk(starts[-1])
    for lo in reversed(starts[:-1]):
        result = chunk(lo) + powers[q] @ result
    for _ in range(squarings):
        result = result @ result
    return result


def ordered_product(mats: np.ndarray) -> np.ndarray:
    """Time-ordered product M[n-1] ... M[1] M[0] along axis -3.

    Pairwise tree reduction; every level is one batched matmul.
    """
    mats = np.asarray(mats)
    n = mats.shape[-3]
    if n == 0:
        raise ValueError("empty product")
    while n > 1:
        if n % 2:
            tail = mats[..., -1:, :, :]
            body = mats[..., :-1, :, :]
        else:
            tail = None
            body = mats
        merged = body[..., 1::2, :, :] @ body[..., 0::2, :, :]
        mats = merged if tail is None else np.concatenate([merged, tail], axis=-3)
        n = mats.shape[-3]
    return mats[..., 0, :, :]
