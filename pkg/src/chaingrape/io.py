"""CSV artifacts (12 significant digits, header row) and JSON sidecars."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .cavity import ControlWaveform, IntraCavityWaveform
from .grape import project_unit_disc

CONTROLS_HEADER = ("t_us", "fx", "fy")
FIELD_HEADER = ("t_us", "omega_x_MHz", "omega_y_MHz")
TRACE_HEADER = ("iter", "phi", "residual_x", "residual_y")
MAP_HEADER = ("delta_MHz", "sigma", "pol_final")
CURVE_HEADER = ("cycle", "pol_mean")


def fmt(x) -> str:
    """Fixed 12-significant-digit rendering; ints stay ints, -0 becomes 0."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if not np.isfinite(x):
        raise ValueError(f"refusing to write non-finite value {x!r}")
    s = f"{x:.12g}"
    return "0" if s == "-0" else s


def write_csv(path: str | Path, header, rows) -> Path:
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError("row width differs from header")
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path: str | Path, header) -> np.ndarray:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if tuple(got) != tuple(header):
            raise ValueError(f"{path}: expected header {','.join(header)}")
        rows = [[float(v) for v in r] for r in reader if r]
    return np.array(rows, dtype=float).reshape(-1, len(header))


def write_controls(path, ctrl: ControlWaveform) -> Path:
    return write_csv(path, CONTROLS_HEADER, zip(ctrl.times, ctrl.fx, ctrl.fy))


def read_controls(path) -> ControlWaveform:
    data = read_csv(path, CONTROLS_HEADER)
    if data.shape[0] < 1:
        raise ValueError(f"{path}: no control steps")
    t = data[:, 0]
    delta_t = float(t[1] - t[0]) if t.size > 1 else None
    if delta_t is None:
        raise ValueError(f"{path}: need at least two steps to infer the control step")
    # times are printed with 12 digits, so the step is only that precise
    delta_t = float(f"{delta_t:.10g}")
    # 12-digit rounding can push rim samples a hair outside the disc
    return ControlWaveform(*project_unit_disc(data[:, 1], data[:, 2]), delta_t)


def write_field(path, wave: IntraCavityWaveform) -> Path:
    # samples are the field at the end of each slice
    t = (np.arange(wave.n_steps) + 1) * wave.dt
    return write_csv(path, FIELD_HEADER, zip(t, wave.omega_x, wave.omega_y))


def write_trace(path, report) -> Path:
    rows = ((i, phi, rx, ry) for i, (phi, (rx, ry)) in enumerate(zip(report.phi_trace, report.residual_trace)))
    return write_csv(path, TRACE_HEADER, rows)


def write_map(path, result) -> Path:
    rows = (
        (d, s, result.final[i, j])
        for i, d in enumerate(result.deltas)
        for j, s in enumerate(result.sigmas)
    )
    return write_csv(path, MAP_HEADER, rows)


def write_curve(path, curve) -> Path:
    return write_csv(path, CURVE_HEADER, ((c + 1, v) for c, v in enumerate(curve)))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        if not np.isfinite(obj):
            raise ValueError("refusing to write non-finite metadata")
        return float(fmt(obj))
    return obj


def write_metadata(path, meta: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_plain(meta), indent=2, sort_keys=True) + "\n")
    return path


def read_metadata(path) -> dict:
    return json.loads(Path(path).read_text())
