"""Command-line front end: ``chaingrape {optimize,scan,pulsepol,standard}``.

Exit codes: 0 success, 1 configuration or I/O problem, 2 an optimization
stopped at max_iters without reaching its fidelity threshold.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cavity import CavityParams, propagate, standard_pulse
from .config import ConfigError, RunConfig, load_config
from .ensemble import (
    PULSE_KEYS,
    NoiseModel,
    NuclearParams,
    PulseLibrary,
    PulsePolConfig,
    average_polarization_curve,
    build_pulsepol_schedule,
    default_tau_range,
    resonance_scan,
    sweep_map,
)
from .grape import CostSpec, gate_fidelities, optimize, random_ansatz, transform_axis
from .io import (
    read_controls,
    write_controls,
    write_csv,
    write_curve,
    write_field,
    write_map,
    write_metadata,
    write_trace,
)
from .spin import rotation

log = logging.getLogger("chaingrape")

EXIT_OK, EXIT_CONFIG, EXIT_THRESHOLD = 0, 1, 2
FULL_SCALE_CYCLES = 500

ANGLES = {"pi": np.pi, "pi/2": np.pi / 2}
# file stem for each (angle, axis) pulse
STEMS = {("pi", "x"): "pi_x", ("pi", "y"): "pi_y", ("pi/2", "x"): "pi2_x", ("pi/2", "y"): "pi2_y"}


def _cavity(cfg: RunConfig) -> CavityParams:
    c = cfg.cavity
    return CavityParams(c.gamma, c.omega_max, c.r)


def _nuclear(cfg: RunConfig) -> NuclearParams:
    n = cfg.nuclear
    return NuclearParams(n.b_field, n.a_x, n.a_z)


def _field_dt(cfg: RunConfig) -> float:
    return cfg.pulse.delta_t / cfg.cavity.r


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory: {exc.strerror}", str(out)) from None
    return out


def _params_meta(cfg: RunConfig) -> dict:
    return {"cavity": cfg.to_dict()["cavity"], "pulse": cfg.to_dict()["pulse"]}


def cmd_optimize(cfg: RunConfig, args) -> int:
    params = _cavity(cfg)
    out = _out_dir(cfg)
    o = cfg.optimizer
    n_steps = int(round(cfg.pulse.duration / cfg.pulse.delta_t))
    status = EXIT_OK
    for angle in ("pi", "pi/2"):
        spec = CostSpec.uniform(
            rotation(ANGLES[angle], "x"),
            span=o.detuning_span,
            points=o.detuning_points,
            alpha=o.alpha,
            fidelity_threshold=o.fidelity_threshold,
            max_iters=o.max_iters,
        )
        init = random_ansatz(n_steps, cfg.pulse.delta_t, cfg.seed, spread=o.init_spread, offset=o.init_offset)
        best, report = optimize(
            init, params, spec, cfg.seed,
            lr=o.lr, beta1=o.beta1, beta2=o.beta2, eps=o.eps, exact_chain=o.exact_chain,
        )
        log.info(
            "%s: phi %.6f after %d iterations (%s, %.1f s)",
            angle, report.final_phi, report.iterations, report.termination, report.wall_clock,
        )
        if not report.converged:
            status = EXIT_THRESHOLD
        x_stem = STEMS[angle, "x"]
        write_trace(out / f"{x_stem}_trace.csv", report)
        for axis, ctrl in (("x", best), ("y", transform_axis(best))):
            stem = STEMS[angle, axis]
            wave = propagate(params, ctrl)
            write_controls(out / f"{stem}_controls.csv", ctrl)
            write_field(out / f"{stem}_field.csv", wave)
            meta = {
                "pulse": stem,
                "theta": ANGLES[angle],
                "axis": axis,
                "derived_from": None if axis == "x" else x_stem,
                "seed": cfg.seed,
                "final_phi": report.final_phi,
                "residual_MHz": list(wave.final),
                "iterations": report.iterations,
                "termination": report.termination,
                "cost": {"detunings_MHz": spec.detunings, "weights": spec.weights, **cfg.to_dict()["optimizer"]},
                **_params_meta(cfg),
            }
            write_metadata(out / f"{stem}.json", meta)
    return status


def _standard_controls(params: CavityParams, dt: float) -> dict:
    return {key: standard_pulse(params, ANGLES[key[0]], dt, axis=key[1])[1] for key in PULSE_KEYS}


def _load_library(folder: Path) -> dict:
    controls = {}
    for key, stem in STEMS.items():
        path = folder / f"{stem}_controls.csv"
        if not path.exists():
            raise ConfigError(f"missing pulse artifact {path.name} (run 'optimize' first)", str(folder))
        try:
            controls[key] = read_controls(path)
        except ValueError as exc:
            raise ConfigError(str(exc), str(path)) from None
    return controls


def cmd_scan(cfg: RunConfig, args) -> int:
    params = _cavity(cfg)
    out = _out_dir(cfg)
    folder = Path(args.controls) if args.controls else out
    deltas = np.linspace(-cfg.scan.span, cfg.scan.span, cfg.scan.points) if cfg.scan.points > 1 else np.zeros(1)
    standard = _standard_controls(params, _field_dt(cfg))
    for angle in ("pi", "pi/2"):
        stem = STEMS[angle, "x"]
        path = folder / f"{stem}_controls.csv"
        if not path.exists():
            raise ConfigError(f"missing pulse artifact {path.name} (run 'optimize' first)", str(folder))
        target = rotation(ANGLES[angle], "x")
        opt = gate_fidelities(propagate(params, read_controls(path)), target, deltas)
        std = gate_fidelities(propagate(params, standard[angle, "x"]), target, deltas)
        write_csv(out / f"scan_{stem}.csv", ("delta_MHz", "fidelity_optimized", "fidelity_standard"), zip(deltas, opt, std))
        log.info("%s: min fidelity optimized %.4f, standard %.4f", angle, opt.min(), std.min())
    return EXIT_OK


def cmd_standard(cfg: RunConfig, args) -> int:
    params = _cavity(cfg)
    out = _out_dir(cfg)
    thetas = {"pi": np.pi, "pi2": np.pi / 2} if args.theta is None else {"theta": args.theta}
    for name, theta in thetas.items():
        try:
            pulse, ctrl = standard_pulse(params, theta, _field_dt(cfg))
        except ValueError as exc:
            raise ConfigError(f"standard pulse: {exc}", cfg.source) from None
        wave = propagate(params, ctrl)
        stem = f"standard_{name}_x"
        write_controls(out / f"{stem}_controls.csv", ctrl)
        write_field(out / f"{stem}_field.csv", wave)
        write_metadata(
            out / f"{stem}.json",
            {"theta": theta, "t1_us": pulse.t1, "t2_us": pulse.t2, "residual_MHz": list(wave.final), **_params_meta(cfg)},
        )
    return EXIT_OK


def cmd_pulsepol(cfg: RunConfig, args) -> int:
    params = _cavity(cfg)
    nuc = _nuclear(cfg)
    out = _out_dir(cfg)
    pp = cfg.pulsepol
    folder = Path(args.controls) if args.controls else out
    if pp.cycles >= FULL_SCALE_CYCLES:
        log.warning("full-scale run (%d cycles): expect a runtime of hours on one core", pp.cycles)
    libraries = {
        "optimized": PulseLibrary(params, _load_library(folder), pp.tail_cutoff),
        "standard": PulseLibrary(params, _standard_controls(params, _field_dt(cfg)), pp.tail_cutoff),
    }
    template = PulsePolConfig(1.0, libraries["optimized"], pp.blocks_per_sequence, pp.sequences_per_cycle, pp.cycles)
    tau = args.tau if args.tau is not None else pp.tau
    if tau is None:
        try:
            tau, _ = resonance_scan(template, nuc, default_tau_range(nuc, pp.tau_window, pp.tau_points))
        except ValueError as exc:
            raise ConfigError(f"resonance scan: {exc}", cfg.source) from None
        log.info("resonance at tau = %.6f us", tau)
    deltas = np.linspace(-pp.delta_span, pp.delta_span, pp.delta_points) if pp.delta_points > 1 else np.zeros(1)
    sigmas = np.linspace(-pp.sigma_span, pp.sigma_span, pp.sigma_points) if pp.sigma_points > 1 else np.zeros(1)
    noise = NoiseModel(0.0, cfg.noise.realizations, cfg.seed)
    summary = {}
    for name, lib in libraries.items():
        run_cfg = PulsePolConfig(tau, lib, pp.blocks_per_sequence, pp.sequences_per_cycle, pp.cycles)
        try:
            build_pulsepol_schedule(run_cfg)
        except ValueError as exc:
            raise ConfigError(f"{name} pulses: {exc}", cfg.source) from None
        t0 = time.perf_counter()
        result = sweep_map(deltas, sigmas, run_cfg, nuc, noise, threads=args.threads)
        log.info("%s sweep took %.1f s", name, time.perf_counter() - t0)
        write_map(out / f"map_{name}.csv", result)
        curve = average_polarization_curve(result, pp.region_delta, pp.region_sigma)
        write_curve(out / f"curve_{name}.csv", curve)
        summary[name] = {"final_curve": curve[-1]}
    write_metadata(
        out / "pulsepol.json",
        {"tau_us": tau, "summary": summary, **{k: v for k, v in cfg.to_dict().items() if k != "out"}},
    )
    return EXIT_OK


COMMANDS = {"optimize": cmd_optimize, "scan": cmd_scan, "pulsepol": cmd_pulsepol, "standard": cmd_standard}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chaingrape", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", help="output directory (overrides config 'out')")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
        p.add_argument("--tau", type=float, help="PulsePol spacing in us; skips the resonance scan")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("scan", "pulsepol"):
            p.add_argument("--controls", help="folder holding optimized pulse CSVs (default: output dir)")
        if name == "standard":
            p.add_argument("--theta", type=float, help="rotation angle in rad (default: pi and pi/2)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        if args.tau is not None and not args.tau > 0:
            raise ConfigError("--tau must be positive")
        cfg = load_config(args.config).with_overrides(out=args.out, seed=args.seed)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
