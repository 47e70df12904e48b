"""Command-line interface: ``solve``, ``synth``, ``bench`` and ``qpn-validate``.

Every :class:`~spherepose.cli_io.RunConfig` key is also a flag (``lambda_p``
becomes ``--lambda-p``); values read from ``--config`` are overridden by
flags. Exit codes: 0 success, 1 usage or input error, 2 infeasible problem,
3 search stopped by a limit with an incumbent pose.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BenchParams, Intrinsics, generate_scene, run_trials
from .cli_io import (InputError, RunConfig, config_to_dict, ensure_parent, format_config, load_bearings,
                     load_points, parse_config, parse_value, save_pixels, save_points, write_bench_report,
                     write_report, _dump_json)
from .mixtures import MixtureError, build_semantic_mixtures
from .objective import ObjectiveContext
from .plotting import plot_bench, plot_bound_evolution, plot_mae_curve
from .solver import EPSILON_OPTIMAL, EmptyDomainError, solve
from .sphere_stats import qpn_pn_mae

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_LIMIT = 3

log = logging.getLogger("spherepose")

SWEEPABLE = ("n_inliers", "omega_3d", "omega_2d", "noise_sigma_px")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file (angles in degrees)")
    g = p.add_argument_group("configuration keys (override --config)")
    for f in fields(RunConfig):
        g.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, metavar="VALUE", default=None)


def _effective_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    if args.config:
        # input paths in a config file are relative to the file itself; store them relative
        # to the working directory so reports do not depend on where the run happened
        base = Path(args.config).parent
        cfg = replace(cfg, **{k: os.path.relpath(base / getattr(cfg, k)) for k in ("model", "image")
                              if getattr(cfg, k) is not None and not Path(getattr(cfg, k)).is_absolute()})
    updates = {}
    for f in fields(RunConfig):
        text = getattr(args, "cfg_" + f.name)
        if text is not None:
            updates[f.name] = parse_value(f.name, text)
    return replace(cfg, **updates)


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


# ---------------------------------------------------------------- solve

def cmd_solve(args) -> int:
    cfg = _effective_config(args)
    if cfg.model is None or cfg.image is None:
        raise InputError("model and image inputs are required (keys 'model' and 'image')")
    points = load_points(cfg.model)
    mode = cfg.image_mode or ("pixel" if cfg.intrinsics is not None else "vector")
    bearings = load_bearings(cfg.image, cfg.intrinsics if mode == "pixel" else None, mode=mode)
    pair = build_semantic_mixtures(points, bearings, cfg.mixture_settings(), cfg.class_weight_dict())
    ctx = ObjectiveContext.from_pair(pair, zeta=cfg.zeta)
    domain = cfg.pose_domain()
    try:
        report = solve(ctx, domain, cfg.solver_config())
    except EmptyDomainError as exc:
        log.error("infeasible: %s", exc)
        return EXIT_INFEASIBLE
    out = ensure_parent(cfg.output or "spherepose_report.json")
    extra = {
        "mixtures": {"classes": [{"label": c.label, "weight": c.weight, "n_model_components": len(c.gmm),
                                  "n_image_components": len(c.vmfmm)} for c in pair.classes]},
        "warnings": list(pair.warnings),
    }
    write_report(report, out, "json", config=cfg, extra=extra)
    write_report(report, _sibling(out, "_trace.csv"), "csv")
    if not args.no_figures:
        plot_bound_evolution(report.trace, _sibling(out, "_bounds.png"))
    p = report.best_pose
    print(f"status {report.status}  d* {report.best_value!r}  gap {report.gap!r}")
    print(f"rotation (angle-axis) {list(p.r)}  camera centre {list(p.t)}")
    return EXIT_OK if report.status == EPSILON_OPTIMAL else EXIT_LIMIT


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    cfg = _effective_config(args)
    intr = cfg.intrinsics or Intrinsics()
    scene = generate_scene(cfg.n_inliers, cfg.omega_3d, cfg.omega_2d, cfg.noise_sigma_px, cfg.seed,
                           intrinsics=intr, torus_major=cfg.torus_major, torus_minor=cfg.torus_minor)
    out = Path(cfg.output or "scene")
    out.mkdir(parents=True, exist_ok=True)
    save_points(out / "model.txt", scene.points_3d)
    save_pixels(out / "pixels.txt", scene.pixels_2d)
    truth = {
        "seed": scene.seed,
        "true_pose": {"angle_axis": list(scene.true_pose.r), "rotation_matrix": scene.true_pose.R.tolist(),
                      "translation": list(scene.true_pose.t)},
        "intrinsics": {"focal": intr.focal, "cx": intr.cx, "cy": intr.cy, "width": intr.width,
                       "height": intr.height},
        "point_inlier": scene.point_inlier.tolist(),
        "pixel_inlier": scene.pixel_inlier.tolist(),
        "pixels_clean": scene.pixels_clean.tolist(),
        "model_centroid": scene.model_centroid.tolist(),
        "config": config_to_dict(cfg),
    }
    _dump_json(truth, out / "scene.json")
    solve_cfg = replace(cfg, model="model.txt", image="pixels.txt", image_mode="pixel", focal=intr.focal,
                        cx=intr.cx, cy=intr.cy, width=intr.width, height=intr.height, domain="torus",
                        output="report.json")
    (out / "solve.cfg").write_text(format_config(solve_cfg), encoding="utf-8")
    print(f"scene written to {out}/ (model.txt, pixels.txt, scene.json, solve.cfg)")
    return EXIT_OK


# ---------------------------------------------------------------- bench

def _bench_params(cfg: RunConfig) -> BenchParams:
    return BenchParams(n_inliers=cfg.n_inliers, omega_3d=cfg.omega_3d, omega_2d=cfg.omega_2d,
                       noise_sigma_px=cfg.noise_sigma_px, torus_major=cfg.torus_major,
                       torus_minor=cfg.torus_minor, mixture=cfg.mixture_settings(), solver=cfg.solver_config())


def _parse_sweep(text: str):
    name, sep, vals = text.partition("=")
    name = name.strip().replace("-", "_")
    if not sep or name not in SWEEPABLE:
        raise InputError(f"sweep: expected PARAM=v1,v2,... with PARAM in {', '.join(SWEEPABLE)}")
    values = [parse_value(name, v) for v in vals.split(",") if v.strip()]
    if not values:
        raise InputError("sweep: no values given")
    return name, values


def cmd_bench(args) -> int:
    cfg = _effective_config(args)
    sweep = _parse_sweep(args.sweep) if args.sweep else None
    settings = [cfg] if sweep is None else [replace(cfg, **{sweep[0]: v}) for v in sweep[1]]
    seeds = list(range(cfg.seed, cfg.seed + cfg.n_trials))
    reports = []
    for s in settings:
        rep = run_trials(_bench_params(s), s.n_trials, seeds, workers=args.jobs)
        reports.append(rep)
        print(f"n_inliers {s.n_inliers} omega_3d {s.omega_3d} omega_2d {s.omega_2d}: "
              f"success {rep.success_rate:.3f}  median rot {np.degrees(rep.rotation_error_q[1]):.3f} deg  "
              f"median rel {100 * rep.relative_translation_error_q[1]:.2f} %  "
              f"median runtime {rep.runtime_q[1]:.1f} s")
    out = ensure_parent(cfg.output or "bench.json")
    write_bench_report(reports, out, _sibling(out, "_trials.csv"), config=cfg, sweep=sweep)
    if not args.no_figures:
        plot_bench(sweep[0] if sweep else "", sweep[1] if sweep else [0.0], reports, _sibling(out, ".png"))
    return EXIT_OK


# ---------------------------------------------------------------- qpn-validate

def cmd_qpn(args) -> int:
    if not (args.rho_min > 0 and args.rho_max >= args.rho_min and args.rho_step > 0):
        raise InputError("rho range: need 0 < rho_min <= rho_max and rho_step > 0")
    n = int(round((args.rho_max - args.rho_min) / args.rho_step)) + 1
    rho = args.rho_min + args.rho_step * np.arange(n)
    mae = [qpn_pn_mae(float(r), args.n_grid) for r in rho]
    out = ensure_parent(args.output)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("rho,mae\n")
        for r, m in zip(rho, mae):
            fh.write(f"{float(r)!r},{m!r}\n")
    if not args.no_figures:
        plot_mae_curve(rho, mae, _sibling(out, ".png"))
    for r, m in zip(rho, mae):
        print(f"rho {r:6.2f}  mae {m:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spherepose", description="Correspondence-free camera pose estimation by globally "
                                                "optimal alignment of spherical mixtures.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="estimate the camera pose from a point-set and bearings/pixels")
    _add_config_flags(s)
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("synth", help="write one synthetic scene and a matching solve configuration")
    _add_config_flags(s)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("bench", help="Monte-Carlo benchmark on synthetic scenes")
    _add_config_flags(s)
    s.add_argument("--sweep", help=f"PARAM=v1,v2,... over one of {', '.join(SWEEPABLE)}")
    s.add_argument("--jobs", type=int, default=1, help="trials run in parallel processes")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("qpn-validate", help="tabulate the qPN-vs-PN mean absolute error over rho")
    s.add_argument("--rho-min", type=float, default=1.0)
    s.add_argument("--rho-max", type=float, default=10.0)
    s.add_argument("--rho-step", type=float, default=0.5)
    s.add_argument("--n-grid", type=int, default=1801)
    s.add_argument("--output", default="qpn_mae.csv")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_qpn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, MixtureError, FileNotFoundError, IsADirectoryError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
