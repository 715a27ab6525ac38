import numpy as np
import pytest
from scipy.linalg import expm

from chaingrape.cavity import CavityParams, ControlWaveform, IntraCavityWaveform, propagate
from chaingrape.ensemble import (
    BLOCK,
    PULSE_KEYS,
    NoiseModel,
    NuclearParams,
    PulseLibrary,
    PulseOverlapError,
    PulsePolConfig,
    Segment,
    average_polarization_curve,
    build_pulsepol_schedule,
    check_density_matrix,
    cycle_unitary,
    default_tau_range,
    delay_unitary,
    evolve_segment,
    fidelity_scan,
    initial_state,
    joint_hamiltonian,
    noise_draws,
    noise_inject,
    nuclear_polarization,
    partial_trace_electron,
    pulse_unitary,
    reinitialize,
    resonance_scan,
    run_protocol,
    schedule_duration,
    sweep_map,
)
from chaingrape.spin import IDENTITY2, SIGMA_X, SIGMA_Z, dagger, rotation

NUC = NuclearParams()


@pytest.fixture(scope="module")
def std_lib(params, standard_library_controls):
    return PulseLibrary(params, standard_library_controls)


@pytest.fixture(scope="module")
def std_cfg(std_lib):
    tau, _ = resonance_scan(PulsePolConfig(1.0, std_lib), NUC, default_tau_range(NUC))
    return PulsePolConfig(tau, std_lib, cycles=20)


def test_nuclear_params():
    assert NUC.omega_n == pytest.approx(10.7084 * 0.015)
    assert NuclearParams(b_field=0.03).omega_n == pytest.approx(2 * NUC.omega_n)


def test_hamiltonian_zero_and_hermitian():
    zero = NuclearParams(b_field=0.0, a_x=0.0, a_z=0.0)
    assert not np.any(joint_hamiltonian(zero, 0.0, 0.0, 0.0))
    rng = np.random.default_rng(0)
    for _ in range(10):
        nuc = NuclearParams(*rng.uniform(0, 1, 3))
        h = joint_hamiltonian(nuc, *rng.normal(size=3))
        assert np.max(np.abs(h - dagger(h))) < 1e-14


def test_secular_hamiltonian_eigenvalues():
    nuc = NuclearParams(a_x=0.0)
    h = joint_hamiltonian(nuc, 0.7)
    assert np.allclose(h, np.diag(np.diag(h)))
    w, az, d = nuc.omega_n + nuc.a_z / 2, nuc.a_z, 0.7
    expected = [se * d / 2 + sn * w + se * sn * az / 2 for se in (1, -1) for sn in (1, -1)]
    assert np.allclose(np.diag(h).real, expected)


def test_hamiltonian_drive_terms():
    h = joint_hamiltonian(NuclearParams(0, 0, 0), 0.0, 2.0, 0.0)
    assert np.allclose(h, np.kron(SIGMA_X, IDENTITY2))


def test_state_helpers():
    rho = initial_state()
    check_density_matrix(rho)
    assert nuclear_polarization(rho) == 0.0
    assert np.allclose(partial_trace_electron(rho), IDENTITY2 / 2)
    rng = np.random.default_rng(1)
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    mixed = a @ a.conj().T
    mixed /= np.trace(mixed)
    once = reinitialize(mixed)
    assert np.allclose(reinitialize(once), once)
    check_density_matrix(once)
    with pytest.raises(ValueError):
        check_density_matrix(np.diag([0.5, 0.5, 0.5, -0.5]).astype(complex))
    with pytest.raises(ValueError):
        check_density_matrix(np.eye(4) / 2)


def test_zero_hamiltonian_leaves_state():
    zero = NuclearParams(0, 0, 0)
    rho = reinitialize(np.eye(4) / 4)
    assert np.allclose(evolve_segment(rho, zero, 0.0, 3.0), rho)


def test_delay_keeps_polarization_from_mixed_nucleus():
    rho = initial_state()
    for t in (0.1, 1.7, 13.0):
        out = evolve_segment(rho, NUC, 1.3, t)
        assert nuclear_polarization(out) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        delay_unitary(NUC, 0.0, -1.0)


def test_delay_matches_scipy():
    h = joint_hamiltonian(NUC, 2.0)
    assert np.allclose(delay_unitary(NUC, 2.0, 3.3), expm(-2j * np.pi * h * 3.3), atol=1e-13)


def test_pulse_unitary_matches_slicewise_scipy():
    rng = np.random.default_rng(2)
    wave = IntraCavityWaveform(rng.normal(0, 10, 30), rng.normal(0, 10, 30), 2.5e-4)
    ref = np.eye(4, dtype=complex)
    for ox, oy in zip(wave.omega_x, wave.omega_y):
        ref = expm(-2j * np.pi * joint_hamiltonian(NUC, 0.4, ox, oy) * wave.dt) @ ref
    assert np.max(np.abs(pulse_unitary(NUC, 0.4, wave) - ref)) < 1e-13


def test_long_evolution_stays_physical():
    rng = np.random.default_rng(3)
    n = 1_000_000
    wave = IntraCavityWaveform(rng.normal(0, 24, n), rng.normal(0, 24, n), 2.5e-4)
    rho = evolve_segment(initial_state(), NUC, 1.0, wave)
    assert abs(np.trace(rho) - 1) < 1e-9
    assert np.max(np.abs(rho - dagger(rho))) < 1e-9
    check_density_matrix(rho)


def test_electron_part_of_pulse_matches_single_spin_gate(params, standard_library_controls):
    # with the nucleus decoupled the joint propagator factorizes
    free = NuclearParams(0, 0, 0)
    wave = propagate(params, standard_library_controls["pi", "x"])
    u = pulse_unitary(free, 0.0, wave)
    assert np.allclose(u, np.kron(rotation(np.pi, "x"), IDENTITY2), atol=1e-8)


def test_fidelity_scan_rows(params, standard_library_controls):
    rows = fidelity_scan(standard_library_controls["pi", "x"], params, rotation(np.pi, "x"), [0.0, 1.0, 5.0])
    assert rows.shape == (3, 2)
    assert rows[0, 1] >= 1 - 1e-8
    assert rows[2, 1] < rows[1, 1] < rows[0, 1]
    assert fidelity_scan(standard_library_controls["pi", "x"], params, rotation(np.pi), 0.0).shape == (1, 2)


def test_pulse_library_validation(params, standard_library_controls):
    with pytest.raises(ValueError):
        PulseLibrary(params, {PULSE_KEYS[0]: standard_library_controls[PULSE_KEYS[0]]})
    odd = dict(standard_library_controls)
    c = odd["pi", "x"]
    odd["pi", "x"] = ControlWaveform(c.fx, c.fy, c.delta_t * 2)
    with pytest.raises(ValueError):
        PulseLibrary(params, odd)


def test_tail_extends_ringing_pulse(params):
    ctrl = ControlWaveform(np.full(20, 0.5), np.zeros(20), 2.5e-3)
    lib = PulseLibrary(params, {k: ctrl for k in PULSE_KEYS}, tail_cutoff=1e-3)
    n_tail = lib.tail_steps(PULSE_KEYS[0])
    wave = lib.waveform(PULSE_KEYS[0])
    assert n_tail > 0 and wave.n_steps == 200 + n_tail
    assert abs(wave.omega_x[-1]) < 1e-3 * params.omega_max <= abs(wave.omega_x[-2])


def test_schedule_structure(std_lib):
    cfg = PulsePolConfig(8.0, std_lib)
    sched = build_pulsepol_schedule(cfg)
    pulses = [s for s in sched if s.kind == "pulse"]
    delays = [s for s in sched if s.kind == "delay"]
    assert [s.key for s in pulses] == [k for k in BLOCK if k is not None]
    assert len(pulses) == 6 and len(delays) == 4
    # group centres on the tau/4 grid make each block last exactly tau
    assert schedule_duration(sched) == pytest.approx(8.0, abs=1e-12)
    # with equal pi/2 durations on both sides, all four delays agree
    assert np.allclose([d.duration for d in delays], delays[0].duration)
    double = build_pulsepol_schedule(PulsePolConfig(8.0, std_lib, blocks_per_sequence=2))
    assert schedule_duration(double) == pytest.approx(2 * schedule_duration(sched))
    assert build_pulsepol_schedule(cfg) == sched


def test_schedule_pulse_centres_on_grid(std_lib):
    tau = 6.0
    sched = build_pulsepol_schedule(PulsePolConfig(tau, std_lib, blocks_per_sequence=2))
    t, centres = 0.0, []
    for seg in sched:
        if seg.kind == "pulse":
            centres.append((t, t + seg.duration))
        t += seg.duration
    # pulse 2 and pulse 5 stand alone: their centres sit tau/2 apart
    p2 = sum(centres[1]) / 2
    p5 = sum(centres[4]) / 2
    assert p5 - p2 == pytest.approx(tau / 2)
    # the (pi/2)_y (pi/2)_x pair is centred tau/4 after pulse 2
    pair = (centres[2][0] + centres[3][1]) / 2
    assert pair - p2 == pytest.approx(tau / 4)


def test_schedule_overlap_error(std_lib):
    with pytest.raises(PulseOverlapError):
        build_pulsepol_schedule(PulsePolConfig(4 * std_lib.longest * 0.99, std_lib))


def test_config_validation(std_lib):
    with pytest.raises(ValueError):
        PulsePolConfig(0.0, std_lib)
    with pytest.raises(ValueError):
        PulsePolConfig(1.0, std_lib, cycles=0)


def test_resonance_is_interior_maximum(std_lib, std_cfg):
    tau = std_cfg.tau
    _, gains = resonance_scan(std_cfg, NUC, [0.8 * tau, tau, 1.2 * tau])
    assert gains[1] > gains[0] and gains[1] > gains[2]
    with pytest.raises(ValueError):
        resonance_scan(std_cfg, NUC, np.linspace(tau, 1.2 * tau, 5))
    with pytest.raises(ValueError):
        resonance_scan(std_cfg, NUC, [tau, 2 * tau])


def test_resonance_scales_inversely_with_field(std_cfg):
    strong = NuclearParams(b_field=0.03)
    tau2, _ = resonance_scan(std_cfg, strong, default_tau_range(strong, points=241))
    ratio = std_cfg.tau / tau2
    larmor_ratio = strong.larmor / NUC.larmor
    assert ratio == pytest.approx(larmor_ratio, rel=0.02)


def test_no_flip_flop_no_transfer(std_cfg):
    nuc = NuclearParams(a_x=0.0)
    _, gains = resonance_scan(std_cfg, nuc, np.linspace(2.0, 12.0, 41))
    assert np.max(gains) < 1e-12
    pol = run_protocol(std_cfg, nuc, 0.0, NoiseModel(0.01, 2, 0))
    assert np.max(np.abs(pol)) < 1e-12


def test_clean_protocol_is_seed_independent(std_cfg):
    a = run_protocol(std_cfg, NUC, 0.5, NoiseModel(0.0, 3, 1))
    b = run_protocol(std_cfg, NUC, 0.5, NoiseModel(0.0, 3, 99))
    assert np.array_equal(a, b)
    assert np.all(np.abs(a) <= 1)


def test_polarization_grows_then_levels(std_cfg):
    cfg = PulsePolConfig(std_cfg.tau, std_cfg.library, cycles=100)
    pol = np.abs(run_protocol(cfg, NUC, 0.0))
    assert np.all(np.diff(pol[:50]) > 0)
    # gain per cycle shrinks as the nucleus polarizes
    assert pol[99] - pol[89] < pol[10] - pol[0]


def naive_protocol(cfg, nuc, delta, noise, cell, cycles):
    """Segment-by-segment reference: one noise_inject + propagate per pulse instance."""
    lib = cfg.library
    sched = build_pulsepol_schedule(cfg)
    out = np.zeros(cycles)
    for real in range(noise.realizations):
        rho = initial_state()
        for c in range(cycles):
            slot = 0
            for _ in range(cfg.sequences_per_cycle):
                for seg in sched:
                    if seg.kind == "delay":
                        rho = evolve_segment(rho, nuc, delta, seg.duration)
                        continue
                    ctrl = noise_inject(lib.controls[seg.key], noise, (*cell, real, c, slot))
                    wave = propagate(lib.params, ctrl)
                    tail = lib.tail_steps(seg.key)
                    if tail:
                        decay = np.exp(-lib.params.gamma * wave.dt * np.arange(1, tail + 1))
                        wave = IntraCavityWaveform(
                            np.concatenate([wave.omega_x, wave.omega_x[-1] * decay]),
                            np.concatenate([wave.omega_y, wave.omega_y[-1] * decay]),
                            wave.dt,
                        )
                    rho = evolve_segment(rho, nuc, delta, wave)
                    slot += 1
            rho = reinitialize(rho)
            check_density_matrix(rho)
            out[c] += nuclear_polarization(rho)
    return out / noise.realizations


def test_noisy_protocol_matches_naive_reference(std_cfg):
    cfg = PulsePolConfig(std_cfg.tau, std_cfg.library, cycles=3)
    noise = NoiseModel(0.05, 2, 7)
    fast = run_protocol(cfg, NUC, 1.5, noise, cell=(4, 2), chunk_cycles=2)
    slow = naive_protocol(cfg, NUC, 1.5, noise, (4, 2), 3)
    assert np.allclose(fast, slow, atol=1e-12)


def test_tiny_noise_approaches_clean_path(std_cfg):
    clean = run_protocol(std_cfg, NUC, 0.0)
    noisy = run_protocol(std_cfg, NUC, 0.0, NoiseModel(1e-9, 1, 0))
    assert np.allclose(clean, noisy, atol=1e-7)


def test_cycle_unitary_is_unitary(std_cfg):
    u = cycle_unitary(std_cfg, NUC, 2.0)
    assert np.allclose(u @ dagger(u), np.eye(4), atol=1e-12)


def test_purity_changes_only_at_reinitialization(std_cfg):
    rho = initial_state()
    u = cycle_unitary(std_cfg, NUC, 0.3)
    for _ in range(5):
        before = np.trace(rho @ rho).real
        rho = u @ rho @ dagger(u)
        assert np.trace(rho @ rho).real == pytest.approx(before, abs=1e-12)
        rho = reinitialize(rho)


def test_noise_inject_properties():
    ctrl = ControlWaveform(np.full(100_000, 0.5), np.full(100_000, -0.3), 1e-3)
    assert noise_inject(ctrl, NoiseModel(0.0), (0,)) is ctrl
    noisy = noise_inject(ctrl, NoiseModel(0.1, seed=3), (1, 2))
    assert np.mean(noisy.fx / ctrl.fx) == pytest.approx(1.0, abs=3e-3)
    assert np.all(np.hypot(noisy.fx, noisy.fy) <= 1 + 1e-12)
    again = noise_inject(ctrl, NoiseModel(0.1, seed=3), (1, 2))
    assert np.array_equal(noisy.fx, again.fx)
    other = noise_inject(ctrl, NoiseModel(0.1, seed=3), (1, 3))
    assert not np.array_equal(noisy.fx, other.fx)
    big = ControlWaveform([0.9], [0.4], 1e-3)
    for i in range(50):
        out = noise_inject(big, NoiseModel(0.5, seed=i), (0,))
        assert np.hypot(out.fx, out.fy)[0] <= 1 + 1e-12


def test_mirrored_noise_negates_draws():
    ctrl = ControlWaveform(np.full(10, 0.5), np.full(10, 0.2), 1e-3)
    up = noise_inject(ctrl, NoiseModel(0.1, seed=1), (5,))
    down = noise_inject(ctrl, NoiseModel.signed(-0.1, seed=1), (5,))
    eps = noise_draws(1, (5,), 10)
    assert np.allclose(up.fx, 0.5 * (1 + 0.1 * eps[0]))
    assert np.allclose(down.fx, 0.5 * (1 - 0.1 * eps[0]))
    with pytest.raises(ValueError):
        NoiseModel(-0.1)
    with pytest.raises(ValueError):
        NoiseModel(0.1, realizations=0)


def test_sigma_sweep_is_statistically_symmetric(std_cfg):
    cfg = PulsePolConfig(std_cfg.tau, std_cfg.library, cycles=5)
    plus = run_protocol(cfg, NUC, 0.0, NoiseModel.signed(0.02, 4, 0))
    minus = run_protocol(cfg, NUC, 0.0, NoiseModel.signed(-0.02, 4, 0))
    clean = run_protocol(cfg, NUC, 0.0)
    # eps -> -eps swaps the two runs; both scatter around the clean curve by O(sigma)
    assert np.allclose(plus, clean, atol=0.02) and np.allclose(minus, clean, atol=0.02)


def test_degenerate_sweep_matches_run(std_cfg):
    noise = NoiseModel(0.0, 2, 0)
    res = sweep_map([0.0], [0.0], std_cfg, NUC, noise)
    assert np.array_equal(res.curves[0, 0], run_protocol(std_cfg, NUC, 0.0, noise, cell=(0, 0)))
    with pytest.raises(ValueError):
        sweep_map([], [0.0], std_cfg, NUC, noise)


def test_parallel_sweep_equals_serial(std_cfg):
    cfg = PulsePolConfig(std_cfg.tau, std_cfg.library, cycles=4)
    noise = NoiseModel(0.0, 2, 11)
    deltas, sigmas = [-1.0, 0.0, 2.0], [-0.01, 0.0, 0.01]
    serial = sweep_map(deltas, sigmas, cfg, NUC, noise, threads=1)
    parallel = sweep_map(deltas, sigmas, cfg, NUC, noise, threads=2)
    assert np.array_equal(serial.curves, parallel.curves)
    curve = average_polarization_curve(serial, 1.0, 0.01)
    mask = serial.region_mask(1.0, 0.01)
    assert mask.sum() == 6
    assert np.allclose(curve, serial.curves[mask].mean(axis=0))
    with pytest.raises(ValueError):
        average_polarization_curve(serial, -1.0, 0.01)


def test_segment_is_hashable_value():
    assert Segment("delay", 1.0) == Segment("delay", 1.0)
    assert len({Segment("pulse", 1.0, ("pi", "x")), Segment("pulse", 1.0, ("pi", "x"))}) == 1


def test_secular_gate_matches_rotation_product():
    # pure electron rotation commutes with nothing nuclear when the nucleus is absent
    free = NuclearParams(0, 0, 0)
    wave = IntraCavityWaveform(np.full(100, 10.0), np.zeros(100), 2.5e-4)
    u = pulse_unitary(free, 0.0, wave)
    theta = 2 * np.pi * 10.0 * 100 * 2.5e-4
    assert np.allclose(u, np.kron(rotation(theta, "x"), IDENTITY2), atol=1e-12)
    assert np.allclose(np.kron(SIGMA_Z, IDENTITY2) @ np.kron(SIGMA_Z, IDENTITY2), np.eye(4))
