"""Upper and lower bounds of the objective over a 6D branch.

The upper bound is the objective at the branch centre. The lower bound
replaces every pairwise angle by its worst case over the branch (spread angle
``A`` for model pairs, alignment angle ``B`` for model/image pairs) and every
projected concentration by an interval over the translation cuboid. Each
``Z(K)/(Z(a)Z(b))`` factor is then bounded by splitting its log into
monotone pieces:

    log Z(K) - log Z(a) - log Z(b) = g(K) - g(a) - g(b) + (K - a - b),
    g(x) = log Z(x) - x  (decreasing),

where ``K - a - b`` is non-increasing in ``a`` and ``b``. Each piece is taken
at its own worst interval endpoint, which is sound and tight as the branch
shrinks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .mixtures import Gmm, Vmfmm
from .objective import ObjectiveContext, objective_value
from .se3 import (BranchRegion, TranslationCuboid, angle_between, box_distance_range, psi_rot, psi_trans,
                  rodrigues)
from .sphere_stats import IsotropicGaussian

STATUS_OK = _kernels.STATUS_OK
STATUS_INFEASIBLE = _kernels.STATUS_INFEASIBLE
STATUS_CENTER_INFEASIBLE = _kernels.STATUS_CENTER_INFEASIBLE
LOWER_ROUNDING = 1e-10


class InfeasibleBranchError(ValueError):
    pass


@dataclass(frozen=True)
class KappaInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (1.0 <= self.lo <= self.hi):
            raise ValueError(f"invalid concentration interval [{self.lo}, {self.hi}]")


def kappa_interval(g: IsotropicGaussian, cuboid: TranslationCuboid, zeta: float) -> KappaInterval:
    """Range of the projected concentration of ``g`` as ``t`` moves over the cuboid."""
    dmin, dmax = box_distance_range(g.mean_array, np.array([cuboid.center]), np.array([cuboid.half_widths]))
    dmin, dmax = float(dmin[0, 0]), float(dmax[0, 0])
    if dmax < zeta:
        raise InfeasibleBranchError("cuboid lies inside the zeta-ball of the Gaussian mean")
    dmin = max(dmin, zeta)
    return KappaInterval(dmin * dmin / g.variance + 1.0, dmax * dmax / g.variance + 1.0)


def spread_angle_A(model: Gmm, i: int, j: int, branch: BranchRegion) -> float:
    """``min(pi, angle(mu_i - t0, mu_j - t0) + psi_t(mu_i) + psi_t(mu_j))``."""
    t0 = np.array(branch.trans.center)
    mi, mj = model.components[i].mean_array, model.components[j].mean_array
    return min(math.pi, angle_between(mi - t0, mj - t0)
               + psi_trans(mi, branch.trans) + psi_trans(mj, branch.trans))


def alignment_angle_B(model: Gmm, image: Vmfmm, i: int, j: int, branch: BranchRegion) -> float:
    """``max(0, angle(mu_i - t0, R0^-1 nu_j) - psi_t(mu_i) - psi_r)``."""
    t0 = np.array(branch.trans.center)
    mi = model.components[i].mean_array
    nu = image.components[j].mean_direction.as_array()
    R0 = rodrigues(branch.rot.center)
    return max(0.0, angle_between(mi - t0, R0.T @ nu) - psi_trans(mi, branch.trans) - psi_rot(branch.rot))


@dataclass
class BoundBatch:
    """Bounds for a batch of branches, in input order."""

    lower: np.ndarray
    upper: np.ndarray
    upper_t: np.ndarray
    self_lb: np.ndarray
    self_center: np.ndarray
    psi_t_max: np.ndarray
    status: np.ndarray

    def __len__(self):
        return len(self.lower)


def _run_kernel(ctx: ObjectiveContext, r0, rot_hw, t0, trans_hw, need_self, out):
    self_lb, self_c, psi_t, status = out
    n = len(r0)
    for k, c in enumerate(ctx.classes):
        s_lb = np.zeros(n)
        s_c = np.zeros(n)
        x_ub = np.zeros(n)
        x_c = np.zeros(n)
        _kernels.class_bounds(c.means, c.sigma2, c.phi1, c.dirs, c.kappa2, c.phi2, c.log_z2, ctx.zeta,
                              r0, rot_hw, t0, trans_hw, need_self,
                              s_lb, s_c, x_ub, x_c, psi_t, status)
        yield k, s_lb, s_c, x_ub, x_c


def _evaluate_chunk(ctx, r0, rot_hw, t0, trans_hw, need_self, self_lb_in, self_c_in):
    n = len(r0)
    psi_t = np.zeros(n)
    status = np.zeros(n, dtype=np.int64)
    self_lb = np.where(need_self, 0.0, self_lb_in)
    self_c = np.where(need_self, 0.0, self_c_in)
    cross_ub = np.zeros(n)
    cross_c = np.zeros(n)
    for k, s_lb, s_c, x_ub, x_c in _run_kernel(ctx, r0, rot_hw, t0, trans_hw, need_self,
                                                (None, None, psi_t, status)):
        w = ctx.classes[k].weight
        self_lb = self_lb + np.where(need_self, w * s_lb, 0.0)
        self_c = self_c + np.where(need_self, w * s_c, 0.0)
        cross_ub += w * x_ub
        cross_c += w * x_c
    return self_lb, self_c, cross_ub, cross_c, psi_t, status


def _project_feasible(ctx: ObjectiveContext, t0, lo, hi, iterations: int = 25):
    """Push ``t0`` out of every zeta-ball while staying in the box; None if that fails."""
    means = ctx.all_means
    t = np.array(t0, dtype=float)
    target = ctx.zeta * (1.0 + 1e-9)
    for _ in range(iterations):
        a = t - means
        d = np.linalg.norm(a, axis=1)
        bad = np.flatnonzero(d < ctx.zeta)
        if len(bad) == 0:
            return t
        k = bad[np.argmin(d[bad])]
        direction = a[k] / d[k] if d[k] > 0 else np.array([1.0, 0.0, 0.0])
        t = np.clip(means[k] + target * direction, lo, hi)
    d = np.linalg.norm(t - means, axis=1)
    return t if np.all(d >= ctx.zeta) else None


def evaluate_bounds(ctx: ObjectiveContext, r0, rot_hw, t0, trans_hw, *, need_self=None,
                    self_lb=None, self_center=None, workers: int = 1, chunk: int = 256) -> BoundBatch:
    """Bounds for branches given as arrays of centres and half-widths.

    ``need_self`` marks branches whose self-term bounds must be computed; for
    the others the supplied ``self_lb``/``self_center`` are reused (children of
    a rotation split share their parent's translation cuboid). Results are
    bit-identical for any ``workers``/``chunk`` split.
    """
    r0 = np.ascontiguousarray(r0, dtype=float).reshape(-1, 3)
    t0 = np.ascontiguousarray(t0, dtype=float).reshape(-1, 3)
    rot_hw = np.ascontiguousarray(rot_hw, dtype=float).reshape(-1)
    trans_hw = np.ascontiguousarray(trans_hw, dtype=float).reshape(-1, 3)
    n = len(r0)
    if need_self is None:
        need_self = np.ones(n, dtype=bool)
        self_lb = np.zeros(n)
        self_center = np.zeros(n)
    need_self = np.ascontiguousarray(need_self, dtype=bool)
    self_lb = np.asarray(self_lb, dtype=float)
    self_center = np.asarray(self_center, dtype=float)
    if n == 0:
        e = np.zeros(0)
        return BoundBatch(e, e, np.zeros((0, 3)), e, e, e, np.zeros(0, dtype=np.int64))

    spans = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]
    args = [(ctx, r0[a:b], rot_hw[a:b], t0[a:b], trans_hw[a:b], need_self[a:b], self_lb[a:b], self_center[a:b])
            for a, b in spans]
    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _evaluate_chunk(*a), args))
    else:
        parts = [_evaluate_chunk(*a) for a in args]
    s_lb, s_c, x_ub, x_c, psi_t, status = (np.concatenate(p) for p in zip(*parts))

    # outward rounding: the log-domain sums carry ~1e-12 relative error
    lower = s_lb - 2.0 * x_ub - LOWER_ROUNDING * (np.abs(s_lb) + 2.0 * np.abs(x_ub))
    upper = s_c - 2.0 * x_c
    upper_t = t0.copy()
    lower = np.where(status == STATUS_INFEASIBLE, math.inf, lower)
    upper = np.where(status == STATUS_INFEASIBLE, math.inf, upper)
    for m in np.flatnonzero(status == STATUS_CENTER_INFEASIBLE):
        t = _project_feasible(ctx, t0[m], t0[m] - trans_hw[m], t0[m] + trans_hw[m])
        if t is None:
            upper[m] = math.inf
        else:
            upper_t[m] = t
            upper[m] = objective_value(ctx, (r0[m], t))
    return BoundBatch(lower, upper, upper_t, s_lb, s_c, psi_t, status)


def _branch_arrays(branches: Sequence[BranchRegion]):
    r0 = np.array([b.rot.center for b in branches]).reshape(-1, 3)
    hw = np.array([b.rot.half_width for b in branches])
    t0 = np.array([b.trans.center for b in branches]).reshape(-1, 3)
    th = np.array([b.trans.half_widths for b in branches]).reshape(-1, 3)
    return r0, hw, t0, th


def evaluate_branches(ctx: ObjectiveContext, branches: Sequence[BranchRegion], workers: int = 1) -> BoundBatch:
    return evaluate_bounds(ctx, *_branch_arrays(branches), workers=workers)


def upper_bound(ctx: ObjectiveContext, branch: BranchRegion) -> float:
    """Objective at the branch centre (or at the nearest feasible box point; ``inf`` if none)."""
    return float(evaluate_branches(ctx, [branch]).upper[0])


def lower_bound(ctx: ObjectiveContext, branch: BranchRegion) -> float:
    """Sound lower bound on the objective over every feasible pose in the branch."""
    b = evaluate_branches(ctx, [branch])
    if b.status[0] == STATUS_INFEASIBLE:
        raise InfeasibleBranchError("every translation in the branch violates the zeta constraint")
    return float(b.lower[0])
