"""Synthetic Monte-Carlo harness: scene generation, pose metrics, a grid oracle and trial sweeps.

Scenes follow the usual random-points protocol: inliers uniform in [-1, 1]^3,
a 640x480 pinhole camera with focal length 800 px, Gaussian pixel noise, 3D
outliers from the same cube and 2D outliers uniform over the image. The camera
centre is drawn from a solid torus around the model with the optical axis
pointing at the torus centre and a uniformly random roll.

Pose convention everywhere: ``x_cam = R (x_world - t)``; ``t`` is the camera
centre in world coordinates.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .mixtures import LabeledBearingSet, LabeledPointSet, MixtureSettings, build_semantic_mixtures
from .objective import ObjectiveContext, objective_values
from .se3 import Pose, PoseDomain, RotationCube, torus_cover
from .solver import SolverConfig, solve

# torus prior used by the benchmark; the [-1,1]^3 model then stays inside the field of view
TORUS_MAJOR = 6.0
TORUS_MINOR = 0.5
RELATIVE_ERROR_REFERENCE = "ground-truth camera distance to the model centroid"
ORACLE_MAX_NODES = 10 ** 8
MAX_POSE_RESAMPLES = 1000


class SceneError(RuntimeError):
    pass


class OracleBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class Intrinsics:
    focal: float = 800.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.focal, 0.0, self.cx], [0.0, self.focal, self.cy], [0.0, 0.0, 1.0]])

    def project(self, p_cam: np.ndarray) -> np.ndarray:
        p = np.asarray(p_cam, dtype=float).reshape(-1, 3)
        return np.column_stack([self.focal * p[:, 0] / p[:, 2] + self.cx,
                                self.focal * p[:, 1] / p[:, 2] + self.cy])

    def bearings(self, pixels: np.ndarray) -> np.ndarray:
        """Unit bearing vectors ``K^-1 (u, v, 1)``, normalized."""
        px = np.asarray(pixels, dtype=float).reshape(-1, 2)
        f = np.column_stack([(px[:, 0] - self.cx) / self.focal, (px[:, 1] - self.cy) / self.focal,
                             np.ones(len(px))])
        return f / np.linalg.norm(f, axis=1, keepdims=True)

    def in_image(self, pixels: np.ndarray) -> np.ndarray:
        px = np.asarray(pixels, dtype=float).reshape(-1, 2)
        return (px[:, 0] >= 0) & (px[:, 0] <= self.width) & (px[:, 1] >= 0) & (px[:, 1] <= self.height)


@dataclass(frozen=True)
class SyntheticScene:
    points_3d: np.ndarray
    point_inlier: np.ndarray
    pixels_2d: np.ndarray
    pixel_inlier: np.ndarray
    pixels_clean: np.ndarray  # noise-free projections of the inliers
    intrinsics: Intrinsics
    true_pose: Pose
    seed: int

    @property
    def model_centroid(self) -> np.ndarray:
        return self.points_3d.mean(axis=0)

    @property
    def bearings(self) -> np.ndarray:
        return self.intrinsics.bearings(self.pixels_2d)


def look_at_rotation(centre: np.ndarray, target: np.ndarray, roll: float) -> np.ndarray:
    """World-to-camera rotation whose optical (z) axis points from ``centre`` to ``target``."""
    z = np.asarray(target, dtype=float) - np.asarray(centre, dtype=float)
    z /= np.linalg.norm(z)
    helper = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    c, s = math.cos(roll), math.sin(roll)
    xr = c * x + s * y
    yr = -s * x + c * y
    return np.vstack([xr, yr, z])


def sample_torus(rng: np.random.Generator, major: float, minor: float) -> np.ndarray:
    """Uniform sample from the solid torus around the z axis, centred at the origin."""
    while True:
        # rejection from the bounding box of one meridian disk, weighted by the radius
        rho = rng.uniform(-minor, minor)
        h = rng.uniform(-minor, minor)
        if rho * rho + h * h > minor * minor:
            continue
        R = major + rho
        if rng.uniform(0.0, major + minor) > R:
            continue
        phi = rng.uniform(0.0, 2.0 * math.pi)
        return np.array([R * math.cos(phi), R * math.sin(phi), h])


def generate_scene(n_inliers: int = 30, omega_3d: float = 0.0, omega_2d: float = 0.0,
                   noise_sigma_px: float = 2.0, seed: int = 0, *, intrinsics: Intrinsics = Intrinsics(),
                   torus_major: float = TORUS_MAJOR, torus_minor: float = TORUS_MINOR) -> SyntheticScene:
    if n_inliers < 3:
        raise ValueError("n_inliers must be >= 3")
    if omega_3d < 0 or omega_2d < 0:
        raise ValueError("outlier ratios must be non-negative")
    rng = np.random.default_rng(seed)
    inliers = rng.uniform(-1.0, 1.0, (n_inliers, 3))
    for _ in range(MAX_POSE_RESAMPLES):
        centre = sample_torus(rng, torus_major, torus_minor)
        R = look_at_rotation(centre, np.zeros(3), rng.uniform(0.0, 2.0 * math.pi))
        cam = (inliers - centre) @ R.T
        if np.any(cam[:, 2] <= 0):
            continue
        clean = intrinsics.project(cam)
        if np.all(intrinsics.in_image(clean)):
            break
    else:
        raise SceneError(f"no pose with every inlier in view after {MAX_POSE_RESAMPLES} resamples")
    noisy = clean + rng.normal(0.0, noise_sigma_px, clean.shape) if noise_sigma_px > 0 else clean.copy()
    n3 = int(math.floor(omega_3d * n_inliers))
    n2 = int(math.floor(omega_2d * n_inliers))
    out3 = rng.uniform(-1.0, 1.0, (n3, 3))
    out2 = np.column_stack([rng.uniform(0.0, intrinsics.width, n2), rng.uniform(0.0, intrinsics.height, n2)])
    return SyntheticScene(
        points_3d=np.vstack([inliers, out3]),
        point_inlier=np.r_[np.ones(n_inliers, bool), np.zeros(n3, bool)],
        pixels_2d=np.vstack([noisy, out2]),
        pixel_inlier=np.r_[np.ones(n_inliers, bool), np.zeros(n2, bool)],
        pixels_clean=clean,
        intrinsics=intrinsics,
        true_pose=Pose.from_matrix(R, centre),
        seed=int(seed),
    )


@dataclass(frozen=True)
class PoseErrors:
    rotation: float
    translation: float
    relative_translation: float


def pose_errors(estimate: Pose, truth: Pose, model_centroid) -> PoseErrors:
    Re, Rg = estimate.R, truth.R
    c = (np.trace(Re @ Rg.T) - 1.0) / 2.0
    rot = float(np.arccos(np.clip(c, -1.0, 1.0)))
    te, tg = estimate.t_array, truth.t_array
    trans = float(np.linalg.norm(te - tg))
    ref = float(np.linalg.norm(tg - np.asarray(model_centroid, dtype=float)))
    return PoseErrors(rot, trans, trans / ref if ref > 0 else math.inf)


def is_success(errors: PoseErrors, rot_tol: float = 0.1, rel_tol: float = 0.05) -> bool:
    return errors.rotation < rot_tol and errors.relative_translation < rel_tol


@dataclass(frozen=True)
class OracleResult:
    value: float
    pose: Pose
    slack: float
    n_nodes: int


def _axis_nodes(lo: float, hi: float, n: int) -> np.ndarray:
    if n == 1 or lo == hi:
        return np.array([(lo + hi) / 2.0])
    return np.linspace(lo, hi, n)


def grid_search_oracle(ctx: ObjectiveContext, domain: PoseDomain, resolution) -> OracleResult:
    """Exhaustive minimum of ``f`` over a regular 6D grid on every domain cuboid.

    ``resolution`` is the number of nodes per axis (an int or six ints); axes
    include their end points, so going from ``n`` to ``2n - 1`` nodes nests the
    grids. The slack is the largest ``|f|`` change seen between adjacent
    feasible nodes.
    """
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (6,))
    if np.any(res < 1):
        raise ValueError("resolution must be >= 1")
    rc = domain.rotation
    grids = []
    total = 0
    for cub in domain.translations:
        axes = [_axis_nodes(rc.center[k] - rc.half_width, rc.center[k] + rc.half_width, res[k]) for k in range(3)]
        axes += [_axis_nodes(cub.lower[k], cub.upper[k], res[3 + k]) for k in range(3)]
        grids.append(axes)
        total += int(np.prod([len(a) for a in axes]))
    if total > ORACLE_MAX_NODES:
        raise OracleBudgetError(f"grid needs {total} evaluations, budget is {ORACLE_MAX_NODES}")
    best = (math.inf, None)
    slack = 0.0
    for axes in grids:
        shape = tuple(len(a) for a in axes)
        vals = np.empty(shape)
        rot_nodes = np.stack(np.meshgrid(*axes[:3], indexing="ij"), -1).reshape(-1, 3)
        trans_nodes = np.stack(np.meshgrid(*axes[3:], indexing="ij"), -1).reshape(-1, 3)
        for a, r in enumerate(rot_nodes):
            v = objective_values(ctx, np.broadcast_to(r, trans_nodes.shape), trans_nodes)
            vals.reshape(len(rot_nodes), -1)[a] = v
        k = int(np.argmin(vals))
        if vals.flat[k] < best[0]:
            idx = np.unravel_index(k, shape)
            r = np.array([axes[d][idx[d]] for d in range(3)])
            t = np.array([axes[3 + d][idx[3 + d]] for d in range(3)])
            best = (float(vals.flat[k]), (r, t))
        for d in range(6):
            if shape[d] > 1:
                diff = np.abs(np.diff(vals, axis=d))
                diff = diff[np.isfinite(diff)]
                if diff.size:
                    slack = max(slack, float(diff.max()))
    if best[1] is None:
        raise OracleBudgetError("no feasible grid node")
    return OracleResult(best[0], Pose.wrapped(*best[1]), slack, total)


@dataclass(frozen=True)
class BenchParams:
    n_inliers: int = 30
    omega_3d: float = 0.0
    omega_2d: float = 0.0
    noise_sigma_px: float = 2.0
    torus_major: float = TORUS_MAJOR
    torus_minor: float = TORUS_MINOR
    mixture: MixtureSettings = MixtureSettings()
    solver: SolverConfig = SolverConfig()


def scene_problem(scene: SyntheticScene, params: BenchParams):
    """Mixtures, objective context and torus-cover domain for a scene."""
    pts = LabeledPointSet(scene.points_3d)
    brg = LabeledBearingSet(scene.bearings)
    pair = build_semantic_mixtures(pts, brg, params.mixture)
    ctx = ObjectiveContext.from_pair(pair, zeta=params.solver.zeta)
    cubes = torus_cover(params.torus_major, params.torus_minor)
    domain = PoseDomain(tuple(cubes), RotationCube(), params.solver.zeta)
    return pair, ctx, domain


@dataclass
class TrialResult:
    seed: int
    success: bool
    rotation_error: float
    translation_error: float
    relative_translation_error: float
    best_value: float
    global_lower: float
    gap: float
    status: str
    n_model_components: int
    n_image_components: int
    branches_evaluated: int
    sma_invocations: int
    runtime: float  # timing field


def run_trial(params: BenchParams, seed: int) -> TrialResult:
    scene = generate_scene(params.n_inliers, params.omega_3d, params.omega_2d, params.noise_sigma_px, seed,
                           torus_major=params.torus_major, torus_minor=params.torus_minor)
    t0 = time.perf_counter()
    pair, ctx, domain = scene_problem(scene, params)
    rep = solve(ctx, domain, replace(params.solver, seed=seed))
    runtime = time.perf_counter() - t0
    err = pose_errors(rep.best_pose, scene.true_pose, scene.model_centroid)
    return TrialResult(seed, is_success(err), err.rotation, err.translation, err.relative_translation,
                       rep.best_value, rep.global_lower, rep.gap, rep.status,
                       sum(len(c.gmm.components) for c in pair.classes),
                       sum(len(c.vmfmm.components) for c in pair.classes),
                       rep.stats.branches_evaluated, rep.stats.sma_invocations, runtime)


def quartiles(x) -> tuple:
    """(Q1, Q2, Q3) with linear interpolation between order statistics."""
    q = np.percentile(np.asarray(x, dtype=float), [25, 50, 75])
    return float(q[0]), float(q[1]), float(q[2])


@dataclass
class BenchReport:
    params: dict
    trials: list
    success_rate: float
    rotation_error_q: tuple
    relative_translation_error_q: tuple
    translation_error_q: tuple
    runtime_q: tuple  # timing field
    metadata: dict = field(default_factory=dict)


def run_trials(params: BenchParams, n_trials: int, seeds: Optional[Sequence[int]] = None,
               workers: int = 1) -> BenchReport:
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    seeds = list(range(n_trials)) if seeds is None else [int(s) for s in seeds][:n_trials]
    if len(seeds) < n_trials:
        raise ValueError("fewer seeds than trials")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(run_trial, [params] * n_trials, seeds))
    else:
        trials = [run_trial(params, s) for s in seeds]
    return BenchReport(
        params=asdict(params),
        trials=trials,
        success_rate=float(np.mean([t.success for t in trials])),
        rotation_error_q=quartiles([t.rotation_error for t in trials]),
        relative_translation_error_q=quartiles([t.relative_translation_error for t in trials]),
        translation_error_q=quartiles([t.translation_error for t in trials]),
        runtime_q=quartiles([t.runtime for t in trials]),
        metadata={"torus_major": params.torus_major, "torus_minor": params.torus_minor,
                  "relative_error_reference": RELATIVE_ERROR_REFERENCE,
                  "quartile_convention": "linear interpolation between order statistics"},
    )
