"""File formats, run configuration and report serialization.

Point-sets are text (``x y z [label]`` per line, ``#`` comments) or PLY.
Bearings are text, either unit vectors (``fx fy fz [label]``) or pixels
(``u v [label]``) mapped through camera intrinsics. Configuration files hold
``key = value`` lines; angles in them are degrees. Reports are JSON documents
plus a CSV trace table. Every wall-clock quantity sits under a ``timing`` key
(JSON) or in the ``time`` column (CSV), so two runs with the same seed and
configuration differ only there.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bench import Intrinsics
from .mixtures import LabeledBearingSet, LabeledPointSet, MixtureSettings
from .se3 import Pose, PoseDomain, RotationCube, TranslationCuboid, torus_cover
from .solver import SolverConfig, SolverReport

REPORT_FORMAT = "spherepose-report/1"
BENCH_FORMAT = "spherepose-bench/1"


class InputError(ValueError):
    """Malformed input file or configuration value."""


# ---------------------------------------------------------------- inputs

def _text_lines(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not UTF-8 text") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _parse_records(path, n_numeric: int, what: str):
    values, labels = [], []
    for lineno, tok in _text_lines(path):
        if len(tok) not in (n_numeric, n_numeric + 1):
            raise InputError(f"{path}: line {lineno}: expected {n_numeric} numbers and an optional label, "
                             f"got {len(tok)} fields")
        try:
            v = [float(x) for x in tok[:n_numeric]]
        except ValueError as exc:
            raise InputError(f"{path}: line {lineno}: non-numeric {what} coordinate") from exc
        if not all(math.isfinite(x) for x in v):
            raise InputError(f"{path}: line {lineno}: non-finite {what} coordinate")
        values.append(v)
        labels.append(tok[n_numeric] if len(tok) > n_numeric else None)
    if not values:
        raise InputError(f"{path}: no records")
    n_lab = sum(lab is not None for lab in labels)
    if 0 < n_lab < len(labels):
        first = next(i for i, lab in enumerate(labels) if lab is None)
        raise InputError(f"{path}: labels must be given on every record or on none (record {first + 1} has none)")
    return np.array(values, dtype=float), (tuple(labels) if n_lab else None)


def _is_ply(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4).rstrip(b"\r\n") == b"ply"


def _load_ply(path) -> LabeledPointSet:
    from plyfile import PlyData

    try:
        ply = PlyData.read(str(path))
        vertex = ply["vertex"]
    except Exception as exc:
        raise InputError(f"{path}: unreadable PLY ({exc})") from exc
    names = vertex.data.dtype.names
    if not {"x", "y", "z"} <= set(names):
        raise InputError(f"{path}: PLY vertices lack x/y/z")
    if len(vertex.data) == 0:
        raise InputError(f"{path}: no vertices")
    pts = np.column_stack([np.asarray(vertex[k], dtype=float) for k in ("x", "y", "z")])
    labels = None
    if "label" in names:
        lab = np.asarray(vertex["label"])
        if not np.issubdtype(lab.dtype, np.integer):
            raise InputError(f"{path}: PLY label property must be an integer type")
        labels = tuple(str(int(v)) for v in lab)
    if not np.all(np.isfinite(pts)):
        raise InputError(f"{path}: non-finite vertex coordinate")
    return LabeledPointSet(pts, labels)


def load_points(path) -> LabeledPointSet:
    """Read a 3D point-set with optional per-point class labels.

    Parameters
    ----------
    path : path-like
        UTF-8 text with one ``x y z [label]`` record per line, or a PLY file
        (ASCII or binary) whose vertices may carry an integer ``label``.

    Raises
    ------
    InputError
        For a malformed line (the message names the line number), a file
        without records, or an unreadable PLY file.
    """
    if _is_ply(path):
        return _load_ply(path)
    pts, labels = _parse_records(path, 3, "point")
    return LabeledPointSet(pts, labels)


def load_bearings(path, intrinsics: Optional[Intrinsics] = None, *, mode: Optional[str] = None) -> LabeledBearingSet:
    """Read bearing vectors, or pixels that are turned into bearings.

    ``mode`` is ``"vector"`` (``fx fy fz [label]``, normalized on load) or
    ``"pixel"`` (``u v [label]``, mapped to ``normalize(K^-1 (u, v, 1))``).
    By default pixel mode is used exactly when ``intrinsics`` is given.
    """
    if mode is None:
        mode = "pixel" if intrinsics is not None else "vector"
    if mode == "vector":
        v, labels = _parse_records(path, 3, "bearing")
        zero = np.flatnonzero(np.linalg.norm(v, axis=1) == 0)
        if len(zero):
            raise InputError(f"{path}: record {zero[0] + 1}: zero bearing vector")
        return LabeledBearingSet(v, labels)
    if mode == "pixel":
        if intrinsics is None:
            raise InputError("pixel-mode bearings need camera intrinsics")
        px, labels = _parse_records(path, 2, "pixel")
        return LabeledBearingSet(intrinsics.bearings(px), labels)
    raise InputError(f"unknown bearing mode {mode!r}")


def save_points(path, points, labels=None) -> None:
    _save_rows(path, np.asarray(points, dtype=float).reshape(-1, 3), labels)


def save_pixels(path, pixels, labels=None) -> None:
    _save_rows(path, np.asarray(pixels, dtype=float).reshape(-1, 2), labels)


def _save_rows(path, rows, labels):
    with open(path, "w", encoding="utf-8") as fh:
        for k, row in enumerate(rows):
            line = " ".join(repr(float(x)) for x in row)
            if labels is not None:
                line += f" {labels[k]}"
            fh.write(line + "\n")


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class RunConfig:
    """Every setting of a CLI run; angles are radians here and degrees in files."""

    model: Optional[str] = None
    image: Optional[str] = None
    image_mode: Optional[str] = None  # "vector" or "pixel"; inferred from intrinsics when unset
    focal: Optional[float] = None
    cx: Optional[float] = None
    cy: Optional[float] = None
    width: Optional[int] = None
    height: Optional[int] = None
    lambda_p: float = 0.25
    lambda_f: float = math.radians(2.0)
    sigma2_min: Optional[float] = None
    kappa_max: Optional[float] = None
    epsilon: float = 0.1
    zeta: float = 0.5
    domain: str = "torus"
    torus_major: float = 6.0
    torus_minor: float = 0.5
    torus_center: tuple = (0.0, 0.0, 0.0)
    torus_axis: tuple = (0.0, 0.0, 1.0)
    translation_box: Optional[tuple] = None  # (xmin, ymin, zmin, xmax, ymax, zmax)
    class_weights: Optional[tuple] = None  # ((label, weight), ...)
    time_limit: Optional[float] = None
    max_branches: Optional[int] = None
    queue_capacity: Optional[int] = None
    batch_size: int = 1024
    workers: int = 1
    seed: int = 0
    n_trials: int = 25
    n_inliers: int = 30
    omega_3d: float = 0.0
    omega_2d: float = 0.0
    noise_sigma_px: float = 2.0
    output: Optional[str] = None

    def __post_init__(self):
        for key in ("lambda_p", "epsilon", "zeta", "torus_major", "torus_minor"):
            if not getattr(self, key) > 0:
                raise InputError(f"{key}: must be positive")
        if not 0 < self.lambda_f < math.pi:
            raise InputError("lambda_f: must lie in (0, 180) degrees")
        for key in ("sigma2_min", "kappa_max", "time_limit", "focal"):
            v = getattr(self, key)
            if v is not None and not v > 0:
                raise InputError(f"{key}: must be positive")
        for key in ("max_branches", "queue_capacity", "width", "height"):
            v = getattr(self, key)
            if v is not None and v < 1:
                raise InputError(f"{key}: must be >= 1")
        for key in ("batch_size", "workers", "n_trials"):
            if getattr(self, key) < 1:
                raise InputError(f"{key}: must be >= 1")
        if self.n_inliers < 3:
            raise InputError("n_inliers: must be >= 3")
        for key in ("omega_3d", "omega_2d", "noise_sigma_px"):
            if getattr(self, key) < 0:
                raise InputError(f"{key}: must be non-negative")
        if self.torus_minor >= self.torus_major:
            raise InputError("torus_minor: must be smaller than torus_major")
        if self.domain not in ("torus", "box"):
            raise InputError("domain: must be 'torus' or 'box'")
        if self.domain == "box" and self.translation_box is None:
            raise InputError("translation_box: required when domain = box")
        if self.translation_box is not None:
            b = self.translation_box
            if any(b[k] > b[k + 3] for k in range(3)):
                raise InputError("translation_box: each minimum must not exceed its maximum")
        if self.image_mode not in (None, "vector", "pixel"):
            raise InputError("image_mode: must be 'vector' or 'pixel'")
        if self.class_weights is not None and any(w < 0 for _, w in self.class_weights):
            raise InputError("class_weights: weights must be non-negative")

    @property
    def intrinsics(self) -> Optional[Intrinsics]:
        vals = (self.focal, self.cx, self.cy, self.width, self.height)
        if all(v is None for v in vals):
            return None
        d = Intrinsics()
        return Intrinsics(*(d_v if v is None else v for v, d_v in zip(vals, (d.focal, d.cx, d.cy, d.width, d.height))))

    def mixture_settings(self) -> MixtureSettings:
        return MixtureSettings(lambda_p=self.lambda_p, lambda_f=self.lambda_f, sigma2_min=self.sigma2_min,
                               kappa_max=self.kappa_max, seed=self.seed)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(epsilon=self.epsilon, zeta=self.zeta, batch_size=self.batch_size,
                            time_limit=self.time_limit, queue_capacity=self.queue_capacity,
                            max_branches=self.max_branches, seed=self.seed, workers=self.workers)

    def pose_domain(self) -> PoseDomain:
        if self.domain == "box":
            b = np.array(self.translation_box, dtype=float)
            cubes = [TranslationCuboid((b[:3] + b[3:]) / 2.0, (b[3:] - b[:3]) / 2.0)]
        else:
            cubes = torus_cover(self.torus_major, self.torus_minor, self.torus_center, self.torus_axis)
        return PoseDomain(tuple(cubes), RotationCube(), self.zeta)

    def class_weight_dict(self) -> Optional[dict]:
        return None if self.class_weights is None else dict(self.class_weights)


def _to_int(key, s):
    try:
        v = float(s)
    except ValueError:
        raise InputError(f"{key}: expected an integer, got {s!r}") from None
    if not v.is_integer():
        raise InputError(f"{key}: expected an integer, got {s!r}")
    return int(v)


def _to_float(key, s):
    try:
        v = float(s)
    except ValueError:
        raise InputError(f"{key}: expected a number, got {s!r}") from None
    if not math.isfinite(v):
        raise InputError(f"{key}: expected a finite number, got {s!r}")
    return v


def _to_vector(n):
    def parse(key, s):
        parts = s.replace(",", " ").split()
        if len(parts) != n:
            raise InputError(f"{key}: expected {n} numbers, got {len(parts)}")
        return tuple(_to_float(key, p) for p in parts)
    return parse


def _to_weights(key, s):
    out = []
    for item in s.split(","):
        item = item.strip()
        if not item:
            continue
        label, sep, w = item.rpartition(":")
        if not sep or not label.strip():
            raise InputError(f"{key}: expected 'label: weight' items, got {item!r}")
        out.append((label.strip(), _to_float(key, w)))
    if not out:
        raise InputError(f"{key}: no weights given")
    return tuple(out)


def _to_str(key, s):
    if not s:
        raise InputError(f"{key}: empty value")
    return s


def _to_degrees(key, s):
    return math.radians(_to_float(key, s))


# key -> (parser from text, formatter to text); lambda_f is degrees in text
_KEYS = {
    "model": (_to_str, str), "image": (_to_str, str), "image_mode": (_to_str, str),
    "focal": (_to_float, repr), "cx": (_to_float, repr), "cy": (_to_float, repr),
    "width": (_to_int, str), "height": (_to_int, str),
    "lambda_p": (_to_float, repr), "lambda_f": (_to_degrees, lambda v: repr(math.degrees(v))),
    "sigma2_min": (_to_float, repr), "kappa_max": (_to_float, repr),
    "epsilon": (_to_float, repr), "zeta": (_to_float, repr),
    "domain": (_to_str, str), "torus_major": (_to_float, repr), "torus_minor": (_to_float, repr),
    "torus_center": (_to_vector(3), lambda v: " ".join(map(repr, v))),
    "torus_axis": (_to_vector(3), lambda v: " ".join(map(repr, v))),
    "translation_box": (_to_vector(6), lambda v: " ".join(map(repr, v))),
    "class_weights": (_to_weights, lambda v: ", ".join(f"{k}: {w!r}" for k, w in v)),
    "time_limit": (_to_float, repr), "max_branches": (_to_int, str), "queue_capacity": (_to_int, str),
    "batch_size": (_to_int, str), "workers": (_to_int, str), "seed": (_to_int, str),
    "n_trials": (_to_int, str), "n_inliers": (_to_int, str),
    "omega_3d": (_to_float, repr), "omega_2d": (_to_float, repr), "noise_sigma_px": (_to_float, repr),
    "output": (_to_str, str),
}
assert set(_KEYS) == {f.name for f in fields(RunConfig)}


def parse_value(key: str, text: str):
    """Parse one configuration value given as text (file units)."""
    if key not in _KEYS:
        raise InputError(f"{key}: unknown configuration key")
    return _KEYS[key][0](key, text.strip())


def parse_config_text(text: str, base: RunConfig = RunConfig(), source: str = "<config>") -> RunConfig:
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise InputError(f"{source}: line {lineno}: expected 'key = value'")
        if key in updates:
            raise InputError(f"{key}: set twice ({source}, line {lineno})")
        updates[key] = parse_value(key, value)
    return replace(base, **updates)


def parse_config(path) -> RunConfig:
    """Read a ``key = value`` configuration file; unset keys keep their defaults.

    Raises
    ------
    InputError
        Naming the offending key for an unknown key, a malformed value or a
        non-positive scale.
    """
    return parse_config_text(Path(path).read_text(encoding="utf-8"), source=str(path))


def config_to_dict(cfg: RunConfig) -> dict:
    """Effective configuration in file units (lambda_f in degrees)."""
    d = {}
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if f.name == "lambda_f":
            v = math.degrees(v)
        elif f.name == "class_weights" and v is not None:
            v = {k: w for k, w in v}
        elif isinstance(v, tuple):
            v = list(v)
        d[f.name] = v
    return d


def config_from_dict(d: dict) -> RunConfig:
    unknown = set(d) - set(_KEYS)
    if unknown:
        raise InputError(f"{sorted(unknown)[0]}: unknown configuration key")
    kw = {}
    for k, v in d.items():
        if v is None:
            kw[k] = None
        elif k == "lambda_f":
            kw[k] = math.radians(v)
        elif k == "class_weights":
            kw[k] = tuple((str(a), float(b)) for a, b in v.items())
        elif isinstance(v, list):
            kw[k] = tuple(v)
        else:
            kw[k] = v
    return RunConfig(**kw)


def format_config(cfg: RunConfig) -> str:
    """Configuration file text that parses back to ``cfg``; unset optional keys are omitted."""
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if v is not None:
            lines.append(f"{f.name} = {_KEYS[f.name][1](v)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- reports

def _pose_dict(pose: Pose) -> dict:
    return {"angle_axis": list(pose.r), "rotation_matrix": pose.R.tolist(), "translation": list(pose.t)}


def _dump_json(obj, path) -> None:
    # repr-based float output: the shortest string that reads back to the same double
    text = json.dumps(obj, indent=2, sort_keys=False, allow_nan=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def report_to_dict(report: SolverReport, config: Optional[RunConfig] = None, extra: Optional[dict] = None) -> dict:
    stats = report.stats_dict()
    wall = stats.pop("wall_time")
    d = {
        "format": REPORT_FORMAT,
        "status": report.status,
        "pose": _pose_dict(report.best_pose),
        "best_value": report.best_value,
        "global_lower": report.global_lower,
        "gap": report.gap,
        "epsilon": report.epsilon,
        "epsilon_meaning": report.epsilon_meaning,
        "stats": stats,
        "trace": {"columns": list(report.TRACE_COLUMNS[1:]), "rows": report.trace[:, 1:].tolist()},
    }
    if extra:
        d.update(extra)
    if config is not None:
        d["config"] = config_to_dict(config)
    d["timing"] = {"wall_time": wall, "trace_time": report.trace[:, 0].tolist()}
    return d


def write_trace_csv(report: SolverReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("wave",) + tuple(report.TRACE_COLUMNS))
        for k, row in enumerate(report.trace):
            w.writerow([k] + [repr(float(x)) for x in row[:4]] + [int(row[4])])


def write_report(report: SolverReport, path, fmt: str = "json", *, config: Optional[RunConfig] = None,
                 extra: Optional[dict] = None) -> None:
    """Write a solver report.

    ``fmt="json"`` writes the hierarchical document (pose as angle-axis,
    matrix and translation; bounds, status, statistics, trace and effective
    configuration). ``fmt="csv"`` writes the flat trace table, one row per
    recorded wave. Floats are written in their shortest exact form, so reading
    them back reproduces every double bit for bit.
    """
    if fmt == "json":
        _dump_json(report_to_dict(report, config, extra), path)
    elif fmt == "csv":
        write_trace_csv(report, path)
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def read_report(path) -> dict:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("format") not in (REPORT_FORMAT, BENCH_FORMAT):
        raise InputError(f"{path}: not a report file")
    return d


def read_trace_csv(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    return {h: np.array([float(r[k]) for r in body]) for k, h in enumerate(head)}


def strip_timing(d: dict) -> dict:
    """Copy of a report dictionary without its timing fields."""
    return {k: v for k, v in d.items() if k != "timing"}


def bench_to_dict(report, config: Optional[RunConfig] = None) -> dict:
    trials = [asdict(t) for t in report.trials]
    d = {
        "format": BENCH_FORMAT,
        "params": report.params,
        "metadata": report.metadata,
        "success_rate": report.success_rate,
        "rotation_error_q": list(report.rotation_error_q),
        "relative_translation_error_q": list(report.relative_translation_error_q),
        "translation_error_q": list(report.translation_error_q),
        "status_counts": _status_counts(report.trials),
        "trials": trials,
    }
    if config is not None:
        d["config"] = config_to_dict(config)
    d["timing"] = {"runtime_q": list(report.runtime_q)}
    return d


def _status_counts(trials) -> dict:
    out = {}
    for t in trials:
        out[t.status] = out.get(t.status, 0) + 1
    return dict(sorted(out.items()))


def write_bench_report(reports: Sequence, json_path, csv_path, *, config: Optional[RunConfig] = None,
                       sweep: Optional[tuple] = None) -> None:
    """Aggregate JSON for one or more parameter settings plus a per-trial CSV table."""
    doc = {"format": BENCH_FORMAT, "settings": [bench_to_dict(r) for r in reports]}
    if sweep is not None:
        doc["sweep"] = {"parameter": sweep[0], "values": list(sweep[1])}
    if config is not None:
        doc["config"] = config_to_dict(config)
    doc["timing"] = {"runtime_q": [s["timing"]["runtime_q"] for s in doc["settings"]]}
    for s in doc["settings"]:
        s.pop("timing")
        for t in s["trials"]:
            t.pop("runtime")
    doc["timing"]["trial_runtime"] = [[t.runtime for t in r.trials] for r in reports]
    _dump_json(doc, json_path)
    cols = [f.name for f in fields(reports[0].trials[0])] if reports and reports[0].trials else []
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["setting"] + cols)
        for k, r in enumerate(reports):
            for t in r.trials:
                w.writerow([k] + [repr(v) if isinstance(v, float) else v for v in (getattr(t, c) for c in cols)])


def ensure_parent(path) -> Path:
    p = Path(path)
    if p.parent and not p.parent.exists():
        os.makedirs(p.parent, exist_ok=True)
    return p
