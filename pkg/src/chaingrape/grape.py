"""Chain-GRAPE: robust gates through a ringing cavity.

The optimizer works on the normalized external control f. Each iteration
propagates f through the cavity, evolves a spin for every detuning on the
grid, differentiates the weighted gate fidelity with respect to the sampled
field Omega^j, adds the ringing correction on the last sample, and pulls the
field gradient back onto f before an ADAM ascent step.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .cavity import CavityParams, ControlWaveform, IntraCavityWaveform, propagate
from .spin import dagger, is_unitary, step_unitary, step_unitary_derivative

log = logging.getLogger(__name__)


class OptimizationDiverged(FloatingPointError):
    def __init__(self, iteration: int, value: float):
        super().__init__(f"non-finite fidelity {value!r} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class CostSpec:
    target: np.ndarray
    detunings: np.ndarray  # MHz
    weights: np.ndarray
    alpha: float = 1e-2
    fidelity_threshold: float = 1e-3
    max_iters: int = 3000

    def __post_init__(self):
        target = np.array(self.target, dtype=complex)
        if target.shape != (2, 2) or not is_unitary(target, 1e-12):
            raise ValueError("target must be a 2x2 unitary")
        deltas = np.array(self.detunings, dtype=float).ravel()
        weights = np.array(self.weights, dtype=float).ravel()
        if deltas.size == 0 or deltas.shape != weights.shape:
            raise ValueError("need one weight per detuning")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        if not 0 < self.fidelity_threshold < 1:
            raise ValueError("fidelity_threshold must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        # reductions run in detuning order so results do not depend on input order
        order = np.argsort(deltas, kind="stable")
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "detunings", deltas[order])
        object.__setattr__(self, "weights", weights[order])

    @classmethod
    def uniform(cls, target, span: float = 5.0, points: int = 21, **kwargs) -> "CostSpec":
        deltas = np.linspace(-span, span, points) if points > 1 else np.zeros(1)
        return cls(target, deltas, np.full(points, 1.0 / points), **kwargs)


def _mul2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # explicit 2x2 product; several times faster than matmul on small stacks
    a00, a01, a10, a11 = a[..., 0, 0], a[..., 0, 1], a[..., 1, 0], a[..., 1, 1]
    b00, b01, b10, b11 = b[..., 0, 0], b[..., 0, 1], b[..., 1, 0], b[..., 1, 1]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=complex)
    out[..., 0, 0] = a00 * b00 + a01 * b10
    out[..., 0, 1] = a00 * b01 + a01 * b11
    out[..., 1, 0] = a10 * b00 + a11 * b10
    out[..., 1, 1] = a10 * b01 + a11 * b11
    return out


def _prefix_products(u: np.ndarray) -> np.ndarray:
    """Inclusive scan along axis -3: out[k] = u[k] ... u[0] (shape (D, N, 2, 2)).

    Blocked: sequential scans inside sqrt(N)-sized blocks run vectorized over
    blocks, then block totals are scanned and folded back in.
    """
    d, n = u.shape[:2]
    b = max(1, int(np.sqrt(n)))
    nb = -(-n // b)
    pad = nb * b - n
    if pad:
        eye = np.broadcast_to(np.eye(2, dtype=complex), (d, pad, 2, 2))
        u = np.concatenate([u, eye], axis=1)
    blocks = u.reshape(d, nb, b, 2, 2).copy()
    for k in range(1, b):
        blocks[:, :, k] = _mul2(blocks[:, :, k], blocks[:, :, k - 1])
    carry = np.empty((d, nb, 2, 2), dtype=complex)
    carry[:, 0] = np.eye(2)
    for m in range(1, nb):
        carry[:, m] = _mul2(blocks[:, m - 1, -1], carry[:, m - 1])
    out = _mul2(blocks, carry[:, :, None])
    return out.reshape(d, nb * b, 2, 2)[:, :n]


def _suffix_products(u: np.ndarray) -> np.ndarray:
    """Inclusive scan along axis -3: out[k] = u[n-1] ... u[k].

    Reversing the sequence and transposing turns it into a prefix scan.
    """
    rev = np.swapaxes(u[:, ::-1], -1, -2)
    return np.swapaxes(_prefix_products(rev), -1, -2)[:, ::-1]


def slice_unitaries(omega_x, omega_y, dt: float, deltas) -> np.ndarray:
    """Step unitaries with shape (n_delta, N, 2, 2)."""
    d = np.asarray(deltas, float)[:, None]
    return step_unitary(d, np.asarray(omega_x)[None, :], np.asarray(omega_y)[None, :], dt)


def gate_unitaries(wave: IntraCavityWaveform, deltas) -> np.ndarray:
    """Total propagator U(delta) = U_N ... U_1 for every detuning."""
    deltas = np.atleast_1d(np.asarray(deltas, float))
    if wave.n_steps == 0:
        return np.broadcast_to(np.eye(2, dtype=complex), (deltas.size, 2, 2)).copy()
    u = slice_unitaries(wave.omega_x, wave.omega_y, wave.dt, deltas)
    return _prefix_products(u)[:, -1]


def gate_fidelities(wave: IntraCavityWaveform, target, deltas) -> np.ndarray:
    """|tr(U(delta)^dagger U_F)|^2 / 4 per detuning."""
    u = gate_unitaries(wave, deltas)
    overlap = np.einsum("dij,ij->d", u.conj(), np.asarray(target))
    return np.abs(overlap) ** 2 / 4.0


def phi_of_wave(wave: IntraCavityWaveform, spec: CostSpec) -> float:
    return float(np.dot(spec.weights, gate_fidelities(wave, spec.target, spec.detunings)))


def cost(ctrl: ControlWaveform, params: CavityParams, spec: CostSpec) -> float:
    """Weighted multi-detuning gate fidelity Phi in [0, 1]."""
    return phi_of_wave(propagate(params, ctrl), spec)


def phi_and_field_gradient(wave: IntraCavityWaveform, spec: CostSpec) -> tuple[float, np.ndarray, np.ndarray]:
    """Phi and dPhi/dOmega_k^j for the sampled field ``wave``.

    Uses the exact derivative of every slice exponential, so the result is
    the true gradient of Phi rather than the first-order GRAPE estimate.
    """
    n = wave.n_steps
    if n == 0:
        return phi_of_wave(wave, spec), np.zeros(0), np.zeros(0)
    deltas = spec.detunings
    ox, oy, dt = wave.omega_x, wave.omega_y, wave.dt
    u = slice_unitaries(ox, oy, dt, deltas)
    fwd = _prefix_products(u)
    bwd = _suffix_products(u)
    eye = np.broadcast_to(np.eye(2, dtype=complex), (deltas.size, 1, 2, 2))
    before = np.concatenate([eye, fwd[:, :-1]], axis=1)  # U_{j-1} ... U_1
    after = np.concatenate([bwd[:, 1:], eye], axis=1)  # U_N ... U_{j+1}
    target_h = dagger(spec.target)
    g = np.einsum("ij,dji->d", target_h, fwd[:, -1])  # tr(U_F^dag U)
    phi = float(np.dot(spec.weights, np.abs(g) ** 2) / 4.0)

    # dg/dOmega^j = tr(U_F^dag U_N..U_{j+1} dU_j U_{j-1}..U_1) = tr(Q_j dU_j)
    q = _mul2(_mul2(before, target_h), after)
    coef = spec.weights * np.conj(g) / 2.0
    d = deltas[:, None]
    grads = []
    for axis in ("x", "y"):
        du = step_unitary_derivative(d, ox[None, :], oy[None, :], dt, axis)
        dg = np.einsum("djab,djba->dj", q, du)
        grads.append(np.real(coef @ dg))
    return phi, grads[0], grads[1]


def grad_phi_wrt_omega(ctrl: ControlWaveform, params: CavityParams, spec: CostSpec) -> tuple[np.ndarray, np.ndarray]:
    """dPhi/dOmega_k^j for both quadratures (length N each)."""
    _, gx, gy = phi_and_field_gradient(propagate(params, ctrl), spec)
    return gx, gy


def apply_ringing_penalty(grad_omega, omega_final, alpha: float):
    """Subtract alpha * Omega_k^N from the last entry of each quadrature's gradient."""
    out = []
    for g, w in zip(grad_omega, omega_final):
        g = np.array(g, dtype=float)
        if g.size:
            g[-1] -= alpha * w
        out.append(g)
    return tuple(out)


def chain_to_control(grad_omega, params: CavityParams, dt: float, *, exact: bool = True):
    """Pull dPhi/dOmega^j back onto the external control steps f^i.

    With ``exact=True`` this is the adjoint of the one-step cavity recursion:
    lambda_j = D_j + e^{-gamma dt} lambda_{j+1}, and control step i collects
    (1 - e^{-gamma dt}) omega_max times the lambdas of its r sub-steps. With
    ``exact=False`` it contracts against the uniform kernel approximation
    of :func:`cavity.response_kernel`, which overweights the sub-steps of a
    partially elapsed control step.
    """
    r = params.r
    decay = np.exp(-params.gamma * dt)
    out = []
    for d in grad_omega:
        d = np.asarray(d, float)
        n = d.size
        if n % r:
            raise ValueError("field length is not a multiple of r")
        lam = _discounted_suffix_sum(d, decay)
        if exact:
            g = (1.0 - decay) * params.omega_max * lam.reshape(-1, r).sum(axis=1)
        else:
            # kernel(j, i) = omega_max (1 - e^{-gamma Dt}) e^{-gamma (j dt - i Dt)} for j > r(i-1)
            i = np.arange(1, n // r + 1)
            j0 = r * (i - 1) + 1
            big_dt = r * dt
            g = (
                params.omega_max
                * (1.0 - np.exp(-params.gamma * big_dt))
                * lam[j0 - 1]
                * np.exp(-params.gamma * (j0 * dt - i * big_dt))
            )
        out.append(g)
    return tuple(out)


def _discounted_suffix_sum(d: np.ndarray, decay: float) -> np.ndarray:
    # lam_j = sum_{m >= j} d_m decay^{m-j}
    return lfilter([1.0], [1.0, -decay], d[::-1])[::-1]


def project_unit_disc(fx, fy):
    """Radially project each (fx, fy) pair onto the closed unit disc."""
    fx = np.asarray(fx, dtype=float)
    fy = np.asarray(fy, dtype=float)
    norm = np.hypot(fx, fy)
    scale = np.where(norm > 1.0, 1.0 / np.where(norm > 1.0, norm, 1.0), 1.0)
    return fx * scale, fy * scale


def transform_axis(ctrl: ControlWaveform) -> ControlWaveform:
    """Control that rotates about Y what ``ctrl`` rotates about X: (fx, fy) -> (-fy, fx)."""
    return ControlWaveform(-ctrl.fy, ctrl.fx.copy(), ctrl.delta_t)


def random_ansatz(
    n_steps: int, delta_t: float, seed: int, *, spread: float = 0.3, offset: float = 0.5
) -> ControlWaveform:
    """Seeded initial guess: ``offset`` on fx plus uniform noise of half-width ``spread``."""
    rng = np.random.default_rng(seed)
    fx = offset + rng.uniform(-spread, spread, n_steps)
    fy = rng.uniform(-spread, spread, n_steps)
    return ControlWaveform(*project_unit_disc(fx, fy), delta_t)


@dataclass
class OptimizerState:
    controls: ControlWaveform
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        n = 2 * self.controls.n_steps
        if self.m.shape != (n,) or self.v.shape != (n,):
            raise ValueError("moment accumulators must have 2*n_f entries")

    @classmethod
    def start(cls, controls: ControlWaveform, **hyper) -> "OptimizerState":
        n = 2 * controls.n_steps
        return cls(controls, np.zeros(n), np.zeros(n), **hyper)


def adam_update(state: OptimizerState, gradient) -> OptimizerState:
    """One bias-corrected ADAM ascent step followed by unit-disc projection."""
    g = np.asarray(gradient, dtype=float).ravel()
    n = state.controls.n_steps
    if g.size != 2 * n:
        raise ValueError("gradient must have 2*n_f entries")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    x = np.concatenate([state.controls.fx, state.controls.fy]) + state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    fx, fy = project_unit_disc(x[:n], x[n:])
    return replace(state, controls=ControlWaveform(fx, fy, state.controls.delta_t), m=m, v=v, t=t)


@dataclass
class OptimizationReport:
    final_phi: float
    phi_trace: list[float] = field(default_factory=list)
    best_trace: list[float] = field(default_factory=list)
    residual_trace: list[tuple[float, float]] = field(default_factory=list)
    residual: tuple[float, float] = (0.0, 0.0)
    wall_clock: float = 0.0
    termination: str = ""
    iterations: int = 0

    @property
    def converged(self) -> bool:
        return self.termination == "threshold"


def optimize(
    init: ControlWaveform | None,
    params: CavityParams,
    spec: CostSpec,
    seed: int = 0,
    *,
    n_steps: int = 120,
    delta_t: float = 2.5e-3,
    lr: float = 1e-2,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    exact_chain: bool = True,
    callback=None,
) -> tuple[ControlWaveform, OptimizationReport]:
    """Run Chain-GRAPE until 1 - Phi < threshold or ``spec.max_iters``.

    When ``init`` is None a seeded :func:`random_ansatz` of ``n_steps`` steps
    of ``delta_t`` is used. Returns the highest-Phi controls seen.
    """
    if init is None:
        init = random_ansatz(n_steps, delta_t, seed)
    state = OptimizerState.start(init, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    report = OptimizationReport(final_phi=float("-inf"))
    best = init
    best_residual = (0.0, 0.0)
    t0 = time.perf_counter()
    termination = "max_iters"
    dt = init.delta_t / params.r

    for it in range(spec.max_iters):
        wave = propagate(params, state.controls)
        phi, gx, gy = phi_and_field_gradient(wave, spec)
        if not np.isfinite(phi):
            raise OptimizationDiverged(it, phi)
        residual = wave.final
        report.phi_trace.append(phi)
        report.residual_trace.append(residual)
        if phi > report.final_phi:
            report.final_phi = phi
            best = state.controls
            best_residual = residual
        report.best_trace.append(report.final_phi)
        if callback is not None:
            callback(it, phi, residual)
        if 1.0 - phi < spec.fidelity_threshold:
            termination = "threshold"
            break
        gx, gy = apply_ringing_penalty((gx, gy), residual, spec.alpha)
        cx, cy = chain_to_control((gx, gy), params, dt, exact=exact_chain)
        state = adam_update(state, np.concatenate([cx, cy]))
        if it % 250 == 0:
            log.debug("iter %d phi %.6f residual %.3g %.3g", it, phi, *residual)

    report.iterations = len(report.phi_trace)
    report.termination = termination
    report.residual = best_residual
    report.wall_clock = time.perf_counter() - t0
    return best, report
