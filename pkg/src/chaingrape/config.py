"""YAML run configuration with line-anchored validation errors."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any

import yaml

REQUIRED = object()


class ConfigError(ValueError):
    """Invalid configuration; ``str()`` gives ``path:line: message``."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.message = message
        self.path = path
        self.line = line
        where = path or "<config>"
        if line is not None:
            where = f"{where}:{line}"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class CavitySection:
    gamma: float = REQUIRED  # type: ignore[assignment]
    omega_max: float = REQUIRED  # type: ignore[assignment]
    r: int = 10


@dataclass(frozen=True)
class PulseSection:
    duration: float = 0.3  # us
    delta_t: float = 2.5e-3  # us, control step


@dataclass(frozen=True)
class OptimizerSection:
    detuning_span: float = 5.0
    detuning_points: int = 21
    alpha: float = 1e-2
    fidelity_threshold: float = 1e-3
    max_iters: int = 3000
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_offset: float = 0.5
    init_spread: float = 0.3
    exact_chain: bool = True


@dataclass(frozen=True)
class ScanSection:
    span: float = 5.0
    points: int = 201


@dataclass(frozen=True)
class NuclearSection:
    b_field: float = 0.015
    a_x: float = 0.004
    a_z: float = 0.0037


@dataclass(frozen=True)
class PulsePolSection:
    tau: float | None = None
    tau_window: float = 0.25
    tau_points: int = 121
    blocks_per_sequence: int = 1
    sequences_per_cycle: int = 2
    cycles: int = 100
    tail_cutoff: float = 1e-3
    delta_span: float = 5.0
    delta_points: int = 9
    sigma_span: float = 0.02
    sigma_points: int = 5
    region_delta: float = 2.0
    region_sigma: float = 0.01


@dataclass(frozen=True)
class NoiseSection:
    realizations: int = 5


SECTIONS = {
    "cavity": CavitySection,
    "pulse": PulseSection,
    "optimizer": OptimizerSection,
    "scan": ScanSection,
    "nuclear": NuclearSection,
    "pulsepol": PulsePolSection,
    "noise": NoiseSection,
}


@dataclass(frozen=True)
class RunConfig:
    cavity: CavitySection
    pulse: PulseSection = PulseSection()
    optimizer: OptimizerSection = OptimizerSection()
    scan: ScanSection = ScanSection()
    nuclear: NuclearSection = NuclearSection()
    pulsepol: PulsePolSection = PulsePolSection()
    noise: NoiseSection = NoiseSection()
    seed: int = 0
    out: str = "results"
    source: str | None = None

    def to_dict(self) -> dict:
        data: dict[str, Any] = {"seed": self.seed, "out": self.out}
        for name in SECTIONS:
            section = getattr(self, name)
            data[name] = {f.name: getattr(section, f.name) for f in fields(section)}
        return data

    def with_overrides(self, **kwargs) -> "RunConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


def _coerce(value, annotation: str, key: str, path, line):
    def bad(kind):
        return ConfigError(f"key '{key}' must be {kind}, got {value!r}", path, line)

    if annotation == "bool":
        if not isinstance(value, bool):
            raise bad("a boolean")
        return value
    if annotation == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad("an integer")
        return value
    if annotation == "str":
        if not isinstance(value, str):
            raise bad("a string")
        return value
    if "float" in annotation:
        if value is None and "None" in annotation:
            return None
        if isinstance(value, str):
            # PyYAML reads 1e-3 (no dot) as a string
            try:
                value = float(value)
            except ValueError:
                raise bad("a number") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad("a number")
        return float(value)
    raise TypeError(annotation)


def _check_ranges(cfg: RunConfig, lines: dict, path) -> None:
    def need(ok, key, msg):
        if not ok:
            raise ConfigError(f"key '{key}' {msg}", path, lines.get(key))

    c, p, o, pp = cfg.cavity, cfg.pulse, cfg.optimizer, cfg.pulsepol
    need(c.gamma > 0, "cavity.gamma", "must be positive")
    need(c.omega_max > 0, "cavity.omega_max", "must be positive")
    need(c.r >= 1, "cavity.r", "must be at least 1")
    need(p.delta_t > 0, "pulse.delta_t", "must be positive")
    need(p.duration >= p.delta_t, "pulse.duration", "must cover at least one control step")
    need(o.detuning_points >= 1, "optimizer.detuning_points", "must be at least 1")
    need(0 < o.fidelity_threshold < 1, "optimizer.fidelity_threshold", "must lie in (0, 1)")
    need(o.max_iters >= 1, "optimizer.max_iters", "must be at least 1")
    need(o.lr > 0, "optimizer.lr", "must be positive")
    need(o.alpha >= 0, "optimizer.alpha", "must be non-negative")
    need(cfg.scan.points >= 1, "scan.points", "must be at least 1")
    need(pp.tau is None or pp.tau > 0, "pulsepol.tau", "must be positive")
    need(0 < pp.tau_window < 1, "pulsepol.tau_window", "must lie in (0, 1)")
    need(pp.tau_points >= 3, "pulsepol.tau_points", "must be at least 3")
    for key in ("blocks_per_sequence", "sequences_per_cycle", "cycles", "delta_points", "sigma_points"):
        need(getattr(pp, key) >= 1, f"pulsepol.{key}", "must be at least 1")
    need(pp.sigma_span >= 0, "pulsepol.sigma_span", "must be non-negative")
    need(cfg.noise.realizations >= 1, "noise.realizations", "must be at least 1")
    need(cfg.seed >= 0, "seed", "must be non-negative")


def parse_config(text: str, path: str | None = None) -> RunConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}", path, mark.line + 1 if mark else None) from None
    if root is None or not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", path, 1)

    lines: dict[str, int] = {}
    sections: dict[str, dict] = {}
    for key_node, value_node in root.value:
        lines[key_node.value] = key_node.start_mark.line + 1
        if isinstance(value_node, yaml.MappingNode):
            for k, _ in value_node.value:
                lines[f"{key_node.value}.{k.value}"] = k.start_mark.line + 1

    top: dict[str, Any] = {}
    for key, value in data.items():
        line = lines.get(key)
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"section '{key}' must be a mapping", path, line)
            sections[key] = value
        elif key in ("seed", "out"):
            top[key] = _coerce(value, "int" if key == "seed" else "str", key, path, line)
        else:
            raise ConfigError(f"unknown key '{key}'", path, line)

    built = {}
    for name, cls in SECTIONS.items():
        given = sections.get(name, {})
        known = {f.name: f for f in fields(cls)}
        for key in given:
            if key not in known:
                raise ConfigError(f"unknown key '{name}.{key}'", path, lines.get(f"{name}.{key}"))
        kwargs = {}
        for fname, f in known.items():
            dotted = f"{name}.{fname}"
            if fname in given:
                kwargs[fname] = _coerce(given[fname], str(f.type), dotted, path, lines.get(dotted))
            elif f.default is REQUIRED:
                raise ConfigError(f"missing required key '{dotted}'", path, lines.get(name, 1))
        built[name] = cls(**kwargs)

    cfg = RunConfig(**built, **top, source=path)
    _check_ranges(cfg, lines, path)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config(text, str(path))
