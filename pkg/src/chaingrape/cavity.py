"""First-order cavity response: external control -> intra-cavity field.

Each quadrature obeys dOmega/dt = gamma*omega_max*f(t) - gamma*Omega(t) with
Omega(0) = 0. Controls are piecewise constant over steps of ``delta_t``; the
field is sampled at the end of each of the ``r`` sub-steps of length
``dt = delta_t / r``, i.e. Omega^j = Omega(j*dt) for j = 1..N.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal

DISC_TOL = 1e-12


@dataclass(frozen=True)
class CavityParams:
    gamma: float  # ringing factor, 1/us
    omega_max: float  # MHz
    r: int = 10  # control step / field step

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.omega_max > 0:
            raise ValueError("omega_max must be positive")
        if int(self.r) != self.r or self.r < 1:
            raise ValueError("r must be a positive integer")


@dataclass(frozen=True)
class ControlWaveform:
    """Normalized external control, two quadratures of n_f steps each."""

    fx: np.ndarray
    fy: np.ndarray
    delta_t: float

    def __post_init__(self):
        fx = np.array(self.fx, dtype=float).ravel()
        fy = np.array(self.fy, dtype=float).ravel()
        if fx.shape != fy.shape:
            raise ValueError("fx and fy must have equal length")
        if not self.delta_t > 0:
            raise ValueError("delta_t must be positive")
        if np.any(fx * fx + fy * fy > 1 + DISC_TOL):
            raise ValueError("control leaves the unit disc")
        fx.setflags(write=False)
        fy.setflags(write=False)
        object.__setattr__(self, "fx", fx)
        object.__setattr__(self, "fy", fy)

    @property
    def n_steps(self) -> int:
        return self.fx.size

    @property
    def duration(self) -> float:
        return self.n_steps * self.delta_t

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.delta_t

    @classmethod
    def zeros(cls, n_steps: int, delta_t: float) -> "ControlWaveform":
        return cls(np.zeros(n_steps), np.zeros(n_steps), delta_t)


@dataclass(frozen=True)
class IntraCavityWaveform:
    omega_x: np.ndarray
    omega_y: np.ndarray
    dt: float

    def __post_init__(self):
        ox = np.array(self.omega_x, dtype=float).ravel()
        oy = np.array(self.omega_y, dtype=float).ravel()
        if ox.shape != oy.shape:
            raise ValueError("omega_x and omega_y must have equal length")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        ox.setflags(write=False)
        oy.setflags(write=False)
        object.__setattr__(self, "omega_x", ox)
        object.__setattr__(self, "omega_y", oy)

    @property
    def n_steps(self) -> int:
        return self.omega_x.size

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.dt

    @property
    def final(self) -> tuple[float, float]:
        if self.n_steps == 0:
            return 0.0, 0.0
        return float(self.omega_x[-1]), float(self.omega_y[-1])


def propagate_array(f: np.ndarray, params: CavityParams, dt: float) -> np.ndarray:
    """Propagate control samples of shape (..., n_f) to fields (..., n_f*r).

    Implements the exact one-step update
    Omega(t+dt) = e^{-gamma dt} Omega(t) + (1 - e^{-gamma dt}) omega_max f.
    """
    decay = np.exp(-params.gamma * dt)
    drive = np.repeat(np.asarray(f, float), params.r, axis=-1)
    return signal.lfilter([(1.0 - decay) * params.omega_max], [1.0, -decay], drive, axis=-1)


def propagate(params: CavityParams, ctrl: ControlWaveform) -> IntraCavityWaveform:
    """Intra-cavity field produced by ``ctrl`` from an empty cavity."""
    dt = ctrl.delta_t / params.r
    ox = propagate_array(ctrl.fx, params, dt)
    oy = propagate_array(ctrl.fy, params, dt)
    return IntraCavityWaveform(ox, oy, dt)


def response_kernel(params: CavityParams, j: int, i: int, dt: float, *, exact: bool = False) -> float:
    """d Omega^j / d f^i for 1-based field index j and control index i.

    By default returns the uniform approximation
    e^{-gamma j dt} omega_max (e^{gamma i Dt} - e^{gamma (i-1) Dt}) for every
    i <= ceil(j/r), which overstates the response of the partially elapsed
    control step. ``exact=True`` returns the true derivative, which differs
    only when i = ceil(j/r) > floor(j/r).
    """
    r = params.r
    big_dt = r * dt
    i_c = -(-j // r)
    i_f = j // r
    if i > i_c or i < 1:
        return 0.0
    g, t = params.gamma, j * dt
    if exact and i > i_f:
        return params.omega_max * (1.0 - np.exp(-g * (t - i_f * big_dt)))
    return params.omega_max * (np.exp(g * (i * big_dt - t)) - np.exp(g * ((i - 1) * big_dt - t)))


def response_matrix(params: CavityParams, n_f: int, dt: float, *, exact: bool = False) -> np.ndarray:
    """Dense (N, n_f) array of :func:`response_kernel` values."""
    n = n_f * params.r
    return np.array(
        [[response_kernel(params, j, i, dt, exact=exact) for i in range(1, n_f + 1)] for j in range(1, n + 1)]
    )


def ringing_tail_angle(omega_final: float, params: CavityParams) -> float:
    """Rotation angle (rad) accumulated on resonance by the decaying residual field."""
    return 2 * np.pi * abs(omega_final) / params.gamma


def ringing_horizon(omega_final: float, params: CavityParams, cutoff: float) -> float:
    """Time (us) for a residual field to decay below ``cutoff`` (MHz)."""
    a = abs(omega_final)
    if a <= cutoff:
        return 0.0
    return np.log(a / cutoff) / params.gamma


def with_ringing_tail(wave: IntraCavityWaveform, params: CavityParams, n_tail: int) -> IntraCavityWaveform:
    """Append ``n_tail`` samples of free decay after the control is switched off."""
    if n_tail <= 0:
        return wave
    decay = np.exp(-params.gamma * wave.dt * np.arange(1, n_tail + 1))
    ox, oy = wave.final
    return IntraCavityWaveform(
        np.concatenate([wave.omega_x, ox * decay]), np.concatenate([wave.omega_y, oy * decay]), wave.dt
    )


@dataclass(frozen=True)
class StandardPulse:
    """Two-segment baseline: full drive for t1, then reversed drive for t2."""

    t1: float
    t2: float
    theta: float
    axis: str = "x"
    sign: int = 1

    def __post_init__(self):
        if not self.t1 > self.t2 > 0:
            raise ValueError("standard pulse requires t1 > t2 > 0")


def _t2_of(t1, gamma):
    # field returns to zero after a reversed drive of this length
    return np.log(2.0 - np.exp(-gamma * t1)) / gamma


def standard_pulse_times(params: CavityParams, theta: float) -> tuple[float, float]:
    """Solve 2*pi*omega_max*(t1 - t2) = theta with t2 = ln(2 - e^{-gamma t1})/gamma."""
    if not 0 < theta <= np.pi:
        raise ValueError("theta must lie in (0, pi]")
    lo = theta / (2 * np.pi * params.omega_max)
    hi = lo + 10.0 / params.gamma

    def err(t1):
        return 2 * np.pi * params.omega_max * (t1 - _t2_of(t1, params.gamma)) - theta

    if err(lo) * err(hi) > 0:
        raise ValueError("no standard-pulse root in the search bracket")
    t1 = optimize.bisect(err, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=400)
    return t1, float(_t2_of(t1, params.gamma))


def standard_pulse(
    params: CavityParams, theta: float, dt: float = 2.5e-4, axis: str = "x", sign: int = 1
) -> tuple[StandardPulse, ControlWaveform]:
    """Fastest ringing-free pulse of angle ``theta`` about ``axis``.

    The continuous solution (t1, t2) rarely lands on the control grid of step
    r*dt. The sampled control therefore uses the grid-averaged two-segment
    shape, and the two steps that straddle the segment ends are re-solved so
    that the *sampled* field rotates by exactly ``theta`` and ends at zero.
    """
    if axis not in ("x", "y"):
        raise ValueError("axis must be 'x' or 'y'")
    t1, t2 = standard_pulse_times(params, theta)
    pulse = StandardPulse(t1, t2, theta, axis, sign)

    big_dt = params.r * dt
    n = int(np.ceil((t1 + t2) / big_dt - 1e-9))
    edges = np.arange(n + 1) * big_dt
    # grid average of the ideal +1 / -1 / 0 profile
    pos = np.clip(np.minimum(edges[1:], t1) - edges[:-1], 0, None)
    neg = np.clip(np.minimum(edges[1:], t1 + t2) - np.maximum(edges[:-1], t1), 0, None)
    f = (pos - neg) / big_dt
    k_switch = min(int(t1 // big_dt), n - 2)
    free = [k_switch, n - 1]

    # both sampled-field constraints are linear in f
    basis = propagate_array(np.eye(n), params, dt)
    area = 2 * np.pi * dt * basis.sum(axis=1)
    final = basis[:, -1]
    a = np.array([area[free], final[free]])
    b = np.array([theta - area @ f + area[free] @ f[free], -(final @ f) + final[free] @ f[free]])
    f[free] = np.linalg.solve(a, b)
    if np.max(np.abs(f)) > 1 + DISC_TOL:
        raise ValueError("control grid too coarse for an exact standard pulse")
    f = np.clip(f, -1.0, 1.0) * sign
    zero = np.zeros(n)
    ctrl = ControlWaveform(f, zero, big_dt) if axis == "x" else ControlWaveform(zero, f, big_dt)
    return pulse, ctrl
