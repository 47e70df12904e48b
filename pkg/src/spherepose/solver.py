"""Best-first branch-and-bound over SE(3) with local refinement of the incumbent.

Branches live in struct-of-arrays storage indexed by slot; a binary heap orders
them by lower bound, then larger volume, then insertion order. Each wave pops
up to ``batch_size // 8`` parents, splits each into 8 children (rotation or
translation octants, whichever half has the larger angular uncertainty) and
evaluates all children in one batch. A child whose centre value beats the
incumbent seeds a local L-BFGS-B refinement.

The search stops with one of four statuses: ``epsilon_optimal`` (gap at most
``epsilon``), ``time_limit``, ``branch_limit`` (a deterministic budget on
evaluated branches) or ``queue_exhausted`` (the next wave would overflow
``queue_capacity``). All but the first return the incumbent and a valid but
loose lower bound.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .bounds import STATUS_INFEASIBLE, evaluate_bounds, evaluate_branches
from .objective import ObjectiveContext, objective_value, value_and_gradient
from .se3 import OCTANTS, SQRT3, Pose, PoseDomain, TranslationCuboid
from .sphere_stats import DegenerateProjectionError

EPSILON_OPTIMAL = "epsilon_optimal"
TIME_LIMIT = "time_limit"
QUEUE_EXHAUSTED = "queue_exhausted"
BRANCH_LIMIT = "branch_limit"

RESTART_ITER = 30  # iteration cap of the restart descent
RESTART_EVERY = 4  # waves between restarts

EPSILON_MEANING = "absolute gap d* - d_lower on the objective (mixture weights sum to 1)"


class EmptyDomainError(ValueError):
    """No part of the search domain satisfies the zeta constraint."""


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 0.1
    zeta: float = 0.5
    batch_size: int = 1024
    time_limit: Optional[float] = None
    queue_capacity: Optional[int] = None
    max_branches: Optional[int] = None
    seed: int = 0
    workers: int = 1
    wave_restarts: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        if int(self.batch_size) < 1:
            raise ValueError("batch_size must be >= 1")
        if self.time_limit is not None and not self.time_limit > 0:
            raise ValueError("time_limit must be positive")
        if self.queue_capacity is not None and int(self.queue_capacity) < 1:
            raise ValueError("queue_capacity must be >= 1")
        if self.max_branches is not None and int(self.max_branches) < 1:
            raise ValueError("max_branches must be >= 1")
        if int(self.workers) < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class SolverStats:
    branches_evaluated: int = 0
    branches_expanded: int = 0
    sma_invocations: int = 0
    sma_improvements: int = 0
    waves: int = 0
    volume_initial: float = 0.0
    volume_queue: float = 0.0
    volume_pruned: float = 0.0
    volume_resolved: float = 0.0
    wall_time: float = 0.0


@dataclass
class SolverReport:
    best_pose: Pose
    best_value: float
    global_lower: float
    gap: float
    status: str
    stats: SolverStats
    trace: np.ndarray  # columns: time, upper, lower, unexplored fraction, queue size
    epsilon: float
    epsilon_meaning: str = EPSILON_MEANING

    TRACE_COLUMNS = ("time", "upper", "lower", "unexplored_fraction", "queue_size")

    def stats_dict(self) -> dict:
        return asdict(self.stats)


def _vec(a) -> np.ndarray:
    return np.asarray(a, dtype=float)


def _refine_in_box(ctx, x0, lo, hi, max_iter, gtol, penalty):
    def fun(x):
        try:
            v, g = value_and_gradient(ctx, x[:3], x[3:], check_zeta=False)
        except DegenerateProjectionError:
            return penalty, np.zeros(6)
        if not np.isfinite(v):
            return penalty, np.zeros(6)
        return v, g

    res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                   options={"maxcor": 10, "maxiter": max_iter, "gtol": gtol, "ftol": 1e-15})
    return np.clip(res.x, lo, hi)


def local_refine(ctx: ObjectiveContext, start: Pose, domain: PoseDomain, *,
                 cuboid: Optional[TranslationCuboid] = None, max_iter: int = 200, gtol: float = 1e-6,
                 max_hops: int = 4):
    """Bounded L-BFGS-B descent from ``start``; never returns a worse pose.

    The rotation stays in the domain's angle-axis cube and the translation in
    one domain cuboid at a time (initially ``cuboid``, default the first one
    containing the start). When the descent stops on a cuboid face that lies
    inside another domain cuboid, it continues in the cuboid that contains the
    point most deeply, up to ``max_hops`` times. A result violating the zeta
    constraint is discarded in favour of the start.
    """
    r0, t0 = start.r_array, start.t_array
    f0 = objective_value(ctx, start)
    if cuboid is None:
        cuboid = next((c for c in domain.translations if c.contains(t0, 1e-12)), None)
    rc = domain.rotation
    rlo = _vec(rc.center) - rc.half_width
    rhi = _vec(rc.center) + rc.half_width
    if cuboid is None:
        return f0, start
    x = np.concatenate([r0, t0])
    penalty = abs(f0) + 1e6
    visited = []
    for _ in range(max_hops + 1):
        visited.append(cuboid)
        lo = np.concatenate([rlo, cuboid.lower])
        hi = np.concatenate([rhi, cuboid.upper])
        if np.all(lo == hi):
            break
        x = _refine_in_box(ctx, np.clip(x, lo, hi), lo, hi, max_iter, gtol, penalty)
        t = x[3:]
        if not np.any((t <= cuboid.lower) | (t >= cuboid.upper)):
            break

        def depth(c):
            return float(np.min(np.minimum(t - c.lower, c.upper - t)))

        nxt = max((c for c in domain.translations if c not in visited and c.contains(t, 1e-12)),
                  key=depth, default=None)
        if nxt is None or depth(nxt) <= 0.0:
            break
        cuboid = nxt
    try:
        pose = Pose.wrapped(x[:3], x[3:])
        value = objective_value(ctx, pose)
    except (ValueError, DegenerateProjectionError):
        return f0, start
    if not (value <= f0 + 1e-12):
        return f0, start
    return value, pose


class _Store:
    """Growable struct-of-arrays branch storage with slot reuse."""

    def __init__(self, capacity: int = 4096):
        self.r0 = np.empty((capacity, 3))
        self.rhw = np.empty(capacity)
        self.t0 = np.empty((capacity, 3))
        self.thw = np.empty((capacity, 3))
        self.lower = np.empty(capacity)
        self.self_lb = np.empty(capacity)
        self.self_c = np.empty(capacity)
        self.psi_t = np.empty(capacity)
        self.root = np.empty(capacity, dtype=np.int64)
        self.free = []
        self.top = 0

    def _grow(self):
        for name in ("r0", "rhw", "t0", "thw", "lower", "self_lb", "self_c", "psi_t", "root"):
            a = getattr(self, name)
            b = np.empty((2 * len(a),) + a.shape[1:], dtype=a.dtype)
            b[:len(a)] = a
            setattr(self, name, b)

    def add_many(self, r0, rhw, t0, thw, lower, self_lb, self_c, psi_t, root) -> list:
        n = len(rhw)
        take = min(n, len(self.free))
        slots = [self.free.pop() for _ in range(take)]
        while self.top + (n - take) > len(self.rhw):
            self._grow()
        slots += range(self.top, self.top + n - take)
        self.top += n - take
        idx = np.array(slots, dtype=np.int64)
        self.r0[idx] = r0
        self.rhw[idx] = rhw
        self.t0[idx] = t0
        self.thw[idx] = thw
        self.lower[idx] = lower
        self.self_lb[idx] = self_lb
        self.self_c[idx] = self_c
        self.psi_t[idx] = psi_t
        self.root[idx] = root
        return slots


def _outside_pi_ball(center: np.ndarray, hw: np.ndarray) -> np.ndarray:
    """Rotation cubes with no point in the closed pi-ball (redundant parameterizations)."""
    gap = np.maximum(np.abs(center) - hw[:, None], 0.0)
    return np.sqrt(np.sum(gap * gap, axis=1)) > math.pi


def evaluate_branch_batch(ctx: ObjectiveContext, branches: list, workers: int = 1) -> list:
    """``(lower, upper)`` per branch in input order; infeasible branches give ``(inf, inf)``."""
    if not branches:
        return []
    b = evaluate_branches(ctx, branches, workers=workers)
    return [(float(lo), float(up)) for lo, up in zip(b.lower, b.upper)]


def solve(ctx: ObjectiveContext, domain: PoseDomain, config: SolverConfig = SolverConfig()) -> SolverReport:
    if ctx.zeta != config.zeta:
        ctx = ObjectiveContext(ctx.classes, config.zeta)
    clock = time.perf_counter
    t_start = clock()
    stats = SolverStats(volume_initial=domain.volume)
    store = _Store()
    heap = []
    seq = 0
    rc = domain.rotation
    cuboids = domain.translations

    best_value = math.inf
    best_pose = None
    queue_volume = 0.0
    lower_floor = math.inf  # lower bounds of zero-size branches dropped without splitting
    candidate = None  # best non-improving centre since the last restart

    def try_incumbent(r, t, upper, root, quick=False):
        nonlocal best_value, best_pose
        stats.sma_invocations += 1
        pose = Pose.wrapped(r, t)
        if quick:
            value, refined = local_refine(ctx, pose, domain, cuboid=cuboids[root], max_iter=RESTART_ITER,
                                          max_hops=0)
            if not value < best_value:
                return
            value, refined = local_refine(ctx, refined, domain, cuboid=cuboids[root])
        else:
            value, refined = local_refine(ctx, pose, domain, cuboid=cuboids[root])
        if upper < best_value:
            best_value, best_pose = upper, pose
        if value < best_value:
            best_value, best_pose = value, refined
            if value < upper:
                stats.sma_improvements += 1

    def absorb(batch, r0, rhw, t0, thw, parent_lower, root, restart=False):
        """Apply a batch in order: incumbent update first, then queue or prune each branch."""
        nonlocal seq, queue_volume, candidate
        stats.branches_evaluated += len(batch)
        lower = np.maximum(batch.lower, parent_lower)
        vols = ((2.0 * rhw) ** 3 * np.prod(2.0 * thw, axis=1)).tolist()
        lower_l = lower.tolist()
        upper_l = batch.upper.tolist()
        infeasible = (batch.status == STATUS_INFEASIBLE).tolist()
        keep = []
        refined_any = False
        for m in range(len(batch)):
            if infeasible[m]:
                stats.volume_resolved += vols[m]
                continue
            if upper_l[m] < best_value:
                try_incumbent(r0[m], batch.upper_t[m], upper_l[m], root[m])
                refined_any = True
            if lower_l[m] >= best_value:
                stats.volume_pruned += vols[m]
                continue
            keep.append(m)
        if restart and not refined_any:
            # narrow basins are rarely hit by a centre: remember the best centre of recent waves
            finite = np.isfinite(batch.upper)
            if np.any(finite):
                m = int(np.argmin(np.where(finite, batch.upper, np.inf)))
                if candidate is None or upper_l[m] < candidate[0]:
                    candidate = (upper_l[m], r0[m].copy(), batch.upper_t[m].copy(), int(root[m]))
        if not keep:
            return
        idx = np.array(keep)
        slots = store.add_many(r0[idx], rhw[idx], t0[idx], thw[idx], lower[idx], batch.self_lb[idx],
                               batch.self_center[idx], batch.psi_t_max[idx], root[idx])
        for m, k in zip(keep, slots):
            heapq.heappush(heap, (lower_l[m], -vols[m], seq, k))
            seq += 1
            queue_volume += vols[m]

    # roots: full rotation cube against each translation cuboid
    n0 = len(cuboids)
    r0 = np.tile(_vec(rc.center), (n0, 1))
    rhw = np.full(n0, rc.half_width)
    t0 = np.array([c.center for c in cuboids], dtype=float)
    thw = np.array([c.half_widths for c in cuboids], dtype=float)
    roots = np.arange(n0)
    batch = evaluate_bounds(ctx, r0, rhw, t0, thw, workers=config.workers)
    if np.all(batch.status == STATUS_INFEASIBLE):
        raise EmptyDomainError("every translation cuboid lies within zeta of a Gaussian mean")
    absorb(batch, r0, rhw, t0, thw, -math.inf, roots)
    if best_pose is None:
        # every centre was infeasible and could not be pushed out of the zeta-balls
        raise EmptyDomainError("no feasible pose found at any branch centre")

    trace = []
    n_parents = max(1, int(config.batch_size) // 8)
    status = EPSILON_OPTIMAL

    def current_lower():
        lo = heap[0][0] if heap else math.inf
        return min(lo, lower_floor, best_value)

    def record():
        d_lo = current_lower()
        frac = queue_volume / stats.volume_initial if stats.volume_initial > 0 else float(bool(heap))
        trace.append((clock() - t_start, best_value, d_lo, frac, len(heap)))
        return d_lo

    d_lo = record()
    while True:
        if best_value - d_lo <= config.epsilon:
            status = EPSILON_OPTIMAL
            break
        if config.time_limit is not None and clock() - t_start >= config.time_limit:
            status = TIME_LIMIT
            break
        if config.max_branches is not None and stats.branches_evaluated >= config.max_branches:
            status = BRANCH_LIMIT
            break
        if config.queue_capacity is not None and len(heap) + 8 * n_parents > config.queue_capacity:
            status = QUEUE_EXHAUSTED
            break
        parents = []
        while heap and len(parents) < n_parents:
            lo, negvol, _, k = heapq.heappop(heap)
            queue_volume -= -negvol
            if lo >= best_value:
                stats.volume_pruned += -negvol
                store.free.append(k)
                continue
            parents.append(k)
        if not parents:
            d_lo = record()
            continue
        rows = []
        for k in parents:
            rot_ok = store.rhw[k] > 0
            trans_ok = bool(np.any(store.thw[k] > 0))
            if not rot_ok and not trans_ok:
                # a single pose: its bounds are exact
                lower_floor = min(lower_floor, float(store.lower[k]))
                store.free.append(k)
                continue
            split_rot = rot_ok and (not trans_ok or min(SQRT3 * store.rhw[k], math.pi) >= store.psi_t[k])
            rows.append((k, split_rot))
        stats.branches_expanded += len(rows)
        if rows:
            m = 8 * len(rows)
            cr0 = np.empty((m, 3))
            crhw = np.empty(m)
            ct0 = np.empty((m, 3))
            cthw = np.empty((m, 3))
            need_self = np.empty(m, dtype=bool)
            s_lb = np.empty(m)
            s_c = np.empty(m)
            plow = np.empty(m)
            croot = np.empty(m, dtype=np.int64)
            for q, (k, split_rot) in enumerate(rows):
                sl = slice(8 * q, 8 * q + 8)
                if split_rot:
                    h = store.rhw[k] / 2.0
                    cr0[sl] = store.r0[k] + OCTANTS * h
                    crhw[sl] = h
                    ct0[sl] = store.t0[k]
                    cthw[sl] = store.thw[k]
                    need_self[sl] = False
                else:
                    h = store.thw[k] / 2.0
                    cr0[sl] = store.r0[k]
                    crhw[sl] = store.rhw[k]
                    ct0[sl] = store.t0[k] + OCTANTS * h
                    cthw[sl] = h
                    need_self[sl] = True
                s_lb[sl] = store.self_lb[k]
                s_c[sl] = store.self_c[k]
                plow[sl] = store.lower[k]
                croot[sl] = store.root[k]
                store.free.append(k)
            # children entirely outside the pi-ball duplicate rotations covered elsewhere
            out = _outside_pi_ball(cr0, crhw)
            if np.any(out):
                vols = (2.0 * crhw[out]) ** 3 * np.prod(2.0 * cthw[out], axis=1)
                stats.volume_resolved += float(np.sum(vols))
                keep = ~out
                cr0, crhw, ct0, cthw = cr0[keep], crhw[keep], ct0[keep], cthw[keep]
                need_self, s_lb, s_c, plow, croot = need_self[keep], s_lb[keep], s_c[keep], plow[keep], croot[keep]
            batch = evaluate_bounds(ctx, cr0, crhw, ct0, cthw, need_self=need_self, self_lb=s_lb,
                                    self_center=s_c, workers=config.workers)
            absorb(batch, cr0, crhw, ct0, cthw, plow, croot, restart=config.wave_restarts)
        stats.waves += 1
        if candidate is not None and stats.waves % RESTART_EVERY == 0:
            try_incumbent(candidate[1], candidate[2], candidate[0], candidate[3], quick=True)
            candidate = None
        d_lo = record()

    stats.volume_queue = queue_volume
    stats.wall_time = clock() - t_start
    d_lo = current_lower()
    return SolverReport(best_pose=best_pose, best_value=float(best_value), global_lower=float(d_lo),
                        gap=float(best_value - d_lo), status=status, stats=stats,
                        trace=np.array(trace, dtype=float).reshape(-1, 5), epsilon=config.epsilon)
