"""NV electron / 13C nucleus simulations driven by cavity pulses.

Covers single-spin fidelity scans over detuning and the PulsePol polarization
transfer protocol: two sequences per cycle followed by NV reinitialization,
with multiplicative Gaussian noise on the external control amplitudes.

The joint Hamiltonian (MHz, electron tensor nucleus) is

    H = (w_n + A_z/2) I.sz + 1/2 sz.(A_x sx + A_z sz)
        + Omega_x/2 sx.I + Omega_y/2 sy.I + delta/2 sz.I

and every slice evolves as exp(-2 pi i H dt).
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .cavity import CavityParams, ControlWaveform, IntraCavityWaveform, propagate, propagate_array
from .grape import gate_fidelities, project_unit_disc
from .spin import IDENTITY2, SIGMA_X, SIGMA_Y, SIGMA_Z, dagger, expm_hermitian

log = logging.getLogger(__name__)

GYRO_C13 = 10.7084  # MHz / T

_IZ = np.kron(IDENTITY2, SIGMA_Z)
_ZX = np.kron(SIGMA_Z, SIGMA_X)
_ZZ = np.kron(SIGMA_Z, SIGMA_Z)
_XI = np.kron(SIGMA_X, IDENTITY2)
_YI = np.kron(SIGMA_Y, IDENTITY2)
_ZI = np.kron(SIGMA_Z, IDENTITY2)
_UP = np.array([[1, 0], [0, 0]], dtype=complex)

PULSE_KEYS = (("pi/2", "x"), ("pi/2", "y"), ("pi", "x"), ("pi", "y"))


@dataclass(frozen=True)
class NuclearParams:
    b_field: float = 0.015  # T
    a_x: float = 0.004  # MHz
    a_z: float = 0.0037  # MHz
    gyro: float = GYRO_C13  # MHz / T

    @property
    def omega_n(self) -> float:
        return self.gyro * self.b_field

    @property
    def larmor(self) -> float:
        """Mean nuclear precession frequency (MHz) under the Hamiltonian above."""
        return 2.0 * (self.omega_n + self.a_z / 2.0)


def joint_hamiltonian(nuc: NuclearParams, delta, omega_x=0.0, omega_y=0.0) -> np.ndarray:
    """4x4 Hamiltonian in MHz; broadcasts over the drive amplitudes."""
    return _static_part(nuc, delta) + np.multiply.outer(omega_x, _XI / 2) + np.multiply.outer(omega_y, _YI / 2)


def _static_part(nuc: NuclearParams, delta: float) -> np.ndarray:
    return (
        (nuc.omega_n + nuc.a_z / 2) * _IZ
        + 0.5 * (nuc.a_x * _ZX + nuc.a_z * _ZZ)
        + 0.5 * delta * _ZI
    )


# state helpers


def initial_state() -> np.ndarray:
    """Electron in |up>, nucleus maximally mixed."""
    return np.kron(_UP, IDENTITY2 / 2)


def reinitialize(rho: np.ndarray) -> np.ndarray:
    """Reset the electron to |up> and keep the nuclear reduced state."""
    return np.kron(_UP, partial_trace_electron(rho))


def partial_trace_electron(rho: np.ndarray) -> np.ndarray:
    r = rho.reshape(2, 2, 2, 2)
    return np.einsum("ajak->jk", r)


def nuclear_polarization(rho: np.ndarray) -> float:
    return float(np.real(np.trace(rho @ _IZ)))


def check_density_matrix(rho: np.ndarray, atol: float = 1e-9) -> None:
    if np.max(np.abs(rho - dagger(rho))) > atol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > atol:
        raise ValueError("density matrix trace differs from 1")
    if np.min(np.linalg.eigvalsh((rho + dagger(rho)) / 2)) < -atol:
        raise ValueError("density matrix is not positive semidefinite")


def pulse_unitary(nuc: NuclearParams, delta: float, wave: IntraCavityWaveform) -> np.ndarray:
    """Time-ordered joint propagator of a sampled pulse."""
    ox = np.ascontiguousarray(wave.omega_x, dtype=float)[None, :]
    oy = np.ascontiguousarray(wave.omega_y, dtype=float)[None, :]
    return pulse_unitaries(nuc, delta, ox, oy, wave.dt)[0]


def pulse_unitaries(nuc: NuclearParams, delta: float, omega_x: np.ndarray, omega_y: np.ndarray, dt: float):
    """Batched :func:`pulse_unitary`; field arrays have shape (B, N)."""
    if omega_x.shape[1] == 0:
        return np.broadcast_to(np.eye(4, dtype=complex), (omega_x.shape[0], 4, 4)).copy()
    return _kernels.pulse_propagators(
        _static_part(nuc, delta),
        _XI / 2,
        _YI / 2,
        np.ascontiguousarray(omega_x, dtype=float),
        np.ascontiguousarray(omega_y, dtype=float),
        float(dt),
    )


def delay_unitary(nuc: NuclearParams, delta: float, duration: float) -> np.ndarray:
    if duration < 0:
        raise ValueError("negative delay")
    if duration == 0:
        return np.eye(4, dtype=complex)
    return expm_hermitian(_static_part(nuc, delta), 2 * np.pi * duration)


def evolve_segment(rho: np.ndarray, nuc: NuclearParams, delta: float, segment, dt: float | None = None) -> np.ndarray:
    """Evolve ``rho`` through a pulse waveform or a free delay (duration in us)."""
    if isinstance(segment, IntraCavityWaveform):
        u = pulse_unitary(nuc, delta, segment)
    else:
        u = delay_unitary(nuc, delta, float(segment))
    return u @ rho @ dagger(u)


# single-spin scans


def fidelity_scan(ctrl: ControlWaveform, params: CavityParams, target, deltas) -> np.ndarray:
    """Rows of (delta, |tr(U(delta)^dagger U_F)|^2 / 4)."""
    deltas = np.atleast_1d(np.asarray(deltas, float))
    fid = gate_fidelities(propagate(params, ctrl), target, deltas)
    return np.column_stack([deltas, fid])


# PulsePol


@dataclass(frozen=True)
class PulseLibrary:
    """External controls for the four PulsePol pulses plus the cavity they drive.

    Each propagated pulse is extended by its free-decay tail until the field
    falls below ``tail_cutoff`` (relative to omega_max); the tail length is
    fixed per pulse type from the noiseless control.
    """

    params: CavityParams
    controls: dict
    tail_cutoff: float = 1e-3

    def __post_init__(self):
        missing = [k for k in PULSE_KEYS if k not in self.controls]
        if missing:
            raise ValueError(f"pulse library lacks {missing}")
        dts = {c.delta_t / self.params.r for c in self.controls.values()}
        if len(dts) != 1:
            raise ValueError("all pulses must share one field time step")

    @property
    def dt(self) -> float:
        ctrl = next(iter(self.controls.values()))
        return ctrl.delta_t / self.params.r

    def tail_steps(self, key) -> int:
        wave = propagate(self.params, self.controls[key])
        res = float(np.hypot(*wave.final))
        cutoff = self.tail_cutoff * self.params.omega_max
        if res <= cutoff:
            return 0
        return int(np.ceil(np.log(res / cutoff) / (self.params.gamma * wave.dt)))

    def waveform(self, key) -> IntraCavityWaveform:
        wave = propagate(self.params, self.controls[key])
        ox, oy = _with_tail(wave.omega_x[None], wave.omega_y[None], self.params, wave.dt, self.tail_steps(key))
        return IntraCavityWaveform(ox[0], oy[0], wave.dt)

    def duration(self, key) -> float:
        return (self.controls[key].n_steps * self.params.r + self.tail_steps(key)) * self.dt

    @property
    def longest(self) -> float:
        return max(self.duration(k) for k in PULSE_KEYS)


def _with_tail(ox: np.ndarray, oy: np.ndarray, params: CavityParams, dt: float, n_tail: int):
    # free decay of the last sample, batched over rows
    if not n_tail:
        return ox, oy
    decay = np.exp(-params.gamma * dt * np.arange(1, n_tail + 1))
    return (
        np.concatenate([ox, ox[:, -1:] * decay], axis=1),
        np.concatenate([oy, oy[:, -1:] * decay], axis=1),
    )


class PulseOverlapError(ValueError):
    pass


@dataclass(frozen=True)
class PulsePolConfig:
    tau: float  # us
    library: PulseLibrary
    blocks_per_sequence: int = 1
    sequences_per_cycle: int = 2
    cycles: int = 100

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        for name in ("blocks_per_sequence", "sequences_per_cycle", "cycles"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")

    def with_tau(self, tau: float) -> "PulsePolConfig":
        return PulsePolConfig(tau, self.library, self.blocks_per_sequence, self.sequences_per_cycle, self.cycles)


@dataclass(frozen=True)
class Segment:
    kind: str  # "pulse" or "delay"
    duration: float  # us
    key: tuple | None = None


# one PulsePol block; None marks a tau/4 spacing
BLOCK = (("pi/2", "y"), None, ("pi", "x"), None, ("pi/2", "y"), ("pi/2", "x"), None, ("pi", "y"), None, ("pi/2", "x"))


def build_pulsepol_schedule(cfg: PulsePolConfig) -> list[Segment]:
    """Flat timeline of one PulsePol sequence.

    Pulses with no spacing between them form a group, and the block is
    treated as periodic: its last pulse and the first pulse of the next block
    are one group centred on the block boundary. Each delay is tau/4 minus
    half the width of the groups on either side, which puts every group
    centre on the tau/4 grid of zero-width pulses and makes each block last
    exactly tau.
    """
    lib = cfg.library
    if cfg.tau / 4 < lib.longest:
        raise PulseOverlapError(
            f"pulses overlap: tau/4 = {cfg.tau / 4:.6g} us is shorter than the longest pulse ({lib.longest:.6g} us)"
        )
    groups: list[list[tuple]] = [[]]
    for item in BLOCK:
        if item is None:
            groups.append([])
        else:
            groups[-1].append(item)
    widths = [sum(lib.duration(k) for k in g) for g in groups]
    # the boundary group wraps around: last group of this block + first of the next
    wrap = widths[0] + widths[-1]
    edge = [wrap] + widths[1:-1] + [wrap]
    block: list[Segment] = []
    for gi, group in enumerate(groups):
        if gi:
            gap = cfg.tau / 4 - edge[gi - 1] / 2 - edge[gi] / 2
            if gap < -1e-12:
                raise PulseOverlapError(f"pulse groups overlap at tau = {cfg.tau:.6g} us")
            block.append(Segment("delay", max(gap, 0.0)))
        block.extend(Segment("pulse", lib.duration(k), k) for k in group)
    return block * cfg.blocks_per_sequence


def schedule_duration(schedule: list[Segment]) -> float:
    return float(sum(s.duration for s in schedule))


@dataclass(frozen=True)
class NoiseModel:
    """Multiplicative Gaussian amplitude noise on the external controls.

    ``mirrored`` flips the sign of every draw, which is how a negative grid
    value of sigma is represented.
    """

    sigma: float = 0.0
    realizations: int = 5
    seed: int = 0
    mirrored: bool = False

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be non-negative")
        if self.realizations < 1:
            raise ValueError("realizations must be at least 1")

    @classmethod
    def signed(cls, sigma: float, realizations: int = 5, seed: int = 0) -> "NoiseModel":
        return cls(abs(sigma), realizations, seed, mirrored=sigma < 0)

    @property
    def active(self) -> bool:
        return self.sigma != 0.0

    @property
    def signed_sigma(self) -> float:
        return -self.sigma if self.mirrored else self.sigma


def noise_draws(seed: int, draw_index, n_steps: int) -> np.ndarray:
    """Unit-normal draws (2, n_steps) for one pulse instance, keyed by ``draw_index``."""
    rng = np.random.default_rng([int(seed), *(int(i) for i in np.atleast_1d(draw_index))])
    return rng.standard_normal((2, n_steps))


def noise_inject(ctrl: ControlWaveform, noise: NoiseModel, draw_index) -> ControlWaveform:
    """f -> f * (1 + sigma * eps) per step and quadrature, then re-projected onto the unit disc."""
    if not noise.active:
        return ctrl
    eps = noise_draws(noise.seed, draw_index, ctrl.n_steps)
    s = noise.signed_sigma
    fx, fy = project_unit_disc(ctrl.fx * (1 + s * eps[0]), ctrl.fy * (1 + s * eps[1]))
    return ControlWaveform(fx, fy, ctrl.delta_t)


def _sequence_unitary(schedule, pulse_u: dict, delay_u: dict) -> np.ndarray:
    u = np.eye(4, dtype=complex)
    for seg in schedule:
        u = (pulse_u[seg.key] if seg.kind == "pulse" else delay_u[seg.duration]) @ u
    return u


def _delay_unitaries(schedule, nuc: NuclearParams, delta: float) -> dict:
    return {s.duration: delay_unitary(nuc, delta, s.duration) for s in schedule if s.kind == "delay"}


def cycle_unitary(cfg: PulsePolConfig, nuc: NuclearParams, delta: float, schedule=None) -> np.ndarray:
    """Noiseless propagator of one cycle (all sequences, before reinitialization)."""
    schedule = build_pulsepol_schedule(cfg) if schedule is None else schedule
    lib = cfg.library
    pulse_u = {k: pulse_unitary(nuc, delta, lib.waveform(k)) for k in PULSE_KEYS}
    seq = _sequence_unitary(schedule, pulse_u, _delay_unitaries(schedule, nuc, delta))
    return np.linalg.matrix_power(seq, cfg.sequences_per_cycle)


def _run_cycles(rho: np.ndarray, cycle_us) -> np.ndarray:
    pol = []
    for u in cycle_us:
        rho = reinitialize(u @ rho @ dagger(u))
        pol.append(nuclear_polarization(rho))
    return np.array(pol)


def run_protocol(
    cfg: PulsePolConfig,
    nuc: NuclearParams,
    delta: float,
    noise: NoiseModel | None = None,
    *,
    cell=(0,),
    chunk_cycles: int = 10,
) -> np.ndarray:
    """Nuclear polarization <sz^n> after each cycle, averaged over noise realizations.

    ``cell`` is folded into every noise draw index so separate grid cells get
    independent, order-free random streams.
    """
    noise = noise or NoiseModel()
    schedule = build_pulsepol_schedule(cfg)
    if not noise.active:
        u = cycle_unitary(cfg, nuc, delta, schedule)
        return _run_cycles(initial_state(), [u] * cfg.cycles)

    lib = cfg.library
    delay_u = [delay_unitary(nuc, delta, seg.duration) if seg.kind == "delay" else None for seg in schedule]
    seq_keys = [seg.key for seg in schedule if seg.kind == "pulse"]
    slots = seq_keys * cfg.sequences_per_cycle
    tails = {k: lib.tail_steps(k) for k in PULSE_KEYS}
    cell = tuple(int(c) for c in np.atleast_1d(cell))
    total = np.zeros(cfg.cycles)
    for real in range(noise.realizations):
        rho = initial_state()
        pol = []
        for c0 in range(0, cfg.cycles, chunk_cycles):
            cycles = range(c0, min(cfg.cycles, c0 + chunk_cycles))
            noisy = {}
            # batch all noisy instances of one pulse type within the chunk
            for key in PULSE_KEYS:
                where = [(c, i) for c in cycles for i, k in enumerate(slots) if k == key]
                if not where:
                    continue
                ctrls = [noise_inject(lib.controls[key], noise, (*cell, real, c, i)) for c, i in where]
                ox = propagate_array(np.stack([c.fx for c in ctrls]), lib.params, lib.dt)
                oy = propagate_array(np.stack([c.fy for c in ctrls]), lib.params, lib.dt)
                ox, oy = _with_tail(ox, oy, lib.params, lib.dt, tails[key])
                noisy.update(zip(where, pulse_unitaries(nuc, delta, ox, oy, lib.dt)))
            for c in cycles:
                u = np.eye(4, dtype=complex)
                slot = 0
                for _ in range(cfg.sequences_per_cycle):
                    for d_u in delay_u:
                        if d_u is None:
                            u = noisy[c, slot] @ u
                            slot += 1
                        else:
                            u = d_u @ u
                rho = reinitialize(u @ rho @ dagger(u))
                pol.append(nuclear_polarization(rho))
        total += np.array(pol)
    return total / noise.realizations


def resonance_scan(cfg: PulsePolConfig, nuc: NuclearParams, taus) -> tuple[float, np.ndarray]:
    """Locate the tau maximizing one-cycle polarization transfer at delta = sigma = 0.

    Returns (tau*, |<sz^n>| gain per scanned tau). Raises ValueError when the
    maximum sits on the edge of the scanned range.
    """
    taus = np.asarray(taus, float)
    if taus.size < 3:
        raise ValueError("need at least three tau values")
    lib = cfg.library
    pulse_u = {k: pulse_unitary(nuc, 0.0, lib.waveform(k)) for k in PULSE_KEYS}
    gains = np.empty(taus.size)
    rho0 = initial_state()
    for i, tau in enumerate(taus):
        schedule = build_pulsepol_schedule(cfg.with_tau(tau))
        seq = _sequence_unitary(schedule, pulse_u, _delay_unitaries(schedule, nuc, 0.0))
        u = np.linalg.matrix_power(seq, cfg.sequences_per_cycle)
        gains[i] = abs(nuclear_polarization(u @ rho0 @ dagger(u)))
    best = int(np.argmax(gains))
    if best in (0, taus.size - 1):
        raise ValueError("no interior transfer maximum in the tau range")
    return float(taus[best]), gains


def default_tau_range(nuc: NuclearParams, width: float = 0.25, points: int = 121) -> np.ndarray:
    """Scan grid of +-``width`` around tau0 = 3 / (2 (w_n + A_z/2)).

    The nucleus precesses at 2 (w_n + A_z/2) under the Hamiltonian above, so
    tau0 lies between the fifth and seventh harmonic resonances and the
    default window contains the fifth.
    """
    center = 3.0 / (2.0 * (nuc.omega_n + nuc.a_z / 2.0))
    return np.linspace(center * (1 - width), center * (1 + width), points)


@dataclass
class SweepResult:
    deltas: np.ndarray
    sigmas: np.ndarray
    curves: np.ndarray  # (n_delta, n_sigma, cycles)

    @property
    def final(self) -> np.ndarray:
        return self.curves[:, :, -1]

    def region_mask(self, delta_max: float, sigma_max: float) -> np.ndarray:
        return (np.abs(self.deltas)[:, None] <= delta_max + 1e-12) & (np.abs(self.sigmas)[None, :] <= sigma_max + 1e-12)


def _sweep_cell(args):
    cfg, nuc, noise, delta, sigma, cell = args
    return run_protocol(cfg, nuc, delta, NoiseModel.signed(sigma, noise.realizations, noise.seed), cell=cell)


def sweep_map(deltas, sigmas, cfg: PulsePolConfig, nuc: NuclearParams, noise: NoiseModel, threads: int = 1) -> SweepResult:
    """One :func:`run_protocol` per (delta, sigma) cell, with per-cell noise streams."""
    deltas = np.atleast_1d(np.asarray(deltas, float))
    sigmas = np.atleast_1d(np.asarray(sigmas, float))
    if deltas.size == 0 or sigmas.size == 0:
        raise ValueError("empty sweep grid")
    jobs = [
        (cfg, nuc, noise, float(d), float(s), (i, j))
        for i, d in enumerate(deltas)
        for j, s in enumerate(sigmas)
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            curves = list(pool.map(_sweep_cell, jobs))
    else:
        curves = [_sweep_cell(job) for job in jobs]
    return SweepResult(deltas, sigmas, np.array(curves).reshape(deltas.size, sigmas.size, cfg.cycles))


def average_polarization_curve(result: SweepResult, delta_max: float = 2.0, sigma_max: float = 0.01) -> np.ndarray:
    """Per-cycle mean of the polarization curves of every cell inside the region."""
    mask = result.region_mask(delta_max, sigma_max)
    if not mask.any():
        raise ValueError("no grid cell inside the averaging region")
    return result.curves[mask].mean(axis=0)
