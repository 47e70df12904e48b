"""Pose parameterization and the branch-and-bound search domain.

Rotations are angle-axis vectors inside the cube circumscribing the pi-ball;
translations live in a union of axis-aligned cuboids minus the zeta-balls
around every Gaussian mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SQRT3 = math.sqrt(3.0)

# 8 octant sign patterns, fixed order so subdivision is deterministic
OCTANTS = np.array([[sx, sy, sz] for sx in (-1.0, 1.0) for sy in (-1.0, 1.0) for sz in (-1.0, 1.0)])


class DomainSplitError(ValueError):
    pass


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {np.shape(v)}")
    return a


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rodrigues(r) -> np.ndarray:
    """Rotation matrix of the angle-axis vector ``r``."""
    r = _vec3(r)
    theta2 = float(r @ r)
    K = skew(r)
    if theta2 < 1e-16:
        # second-order series: sin(t)/t ~ 1 - t^2/6, (1 - cos t)/t^2 ~ 1/2 - t^2/24
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        theta = math.sqrt(theta2)
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta2
    return np.eye(3) + a * K + b * (K @ K)


def rodrigues_batch(r: np.ndarray) -> np.ndarray:
    """Vectorized :func:`rodrigues` over an (M, 3) array."""
    r = np.asarray(r, dtype=float).reshape(-1, 3)
    theta2 = np.einsum("ij,ij->i", r, r)
    small = theta2 < 1e-16
    theta = np.sqrt(np.where(small, 1.0, theta2))
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(theta) / theta)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, theta2))
    K = np.zeros((len(r), 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -r[:, 2], r[:, 1]
    K[:, 1, 0], K[:, 1, 2] = r[:, 2], -r[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -r[:, 1], r[:, 0]
    return np.eye(3)[None] + a[:, None, None] * K + b[:, None, None] * (K @ K)


def rotation_log(R) -> np.ndarray:
    """Angle-axis vector (norm in [0, pi]) of a rotation matrix."""
    R = np.asarray(R, dtype=float)
    c = min(max((np.trace(R) - 1.0) / 2.0, -1.0), 1.0)
    theta = math.acos(c)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-7:
        return 0.5 * w
    if math.pi - theta < 1e-4:
        # near a half turn the antisymmetric part vanishes; take the axis from R + I
        B = 0.5 * (R + np.eye(3))
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / math.sqrt(max(B[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if axis @ w < 0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * math.sin(theta)) * w


def angle_between(a, b) -> float:
    """Angle between two non-zero vectors, accurate near 0 and pi."""
    a = _vec3(a)
    b = _vec3(b)
    return math.atan2(float(np.linalg.norm(np.cross(a, b))), float(a @ b))


@dataclass(frozen=True)
class Pose:
    r: tuple
    t: tuple

    def __post_init__(self):
        r = tuple(float(c) for c in _vec3(self.r))
        t = tuple(float(c) for c in _vec3(self.t))
        if math.sqrt(sum(c * c for c in r)) > math.pi + 1e-9:
            raise ValueError("angle-axis vector must have norm <= pi")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @classmethod
    def from_matrix(cls, R, t) -> "Pose":
        return cls(rotation_log(R), t)

    @classmethod
    def wrapped(cls, r, t) -> "Pose":
        """Pose from any angle-axis vector, mapped back into the pi-ball."""
        return cls(rotation_log(rodrigues(r)), t)

    @property
    def R(self) -> np.ndarray:
        return rodrigues(self.r)

    @property
    def r_array(self) -> np.ndarray:
        return np.array(self.r)

    @property
    def t_array(self) -> np.ndarray:
        return np.array(self.t)


@dataclass(frozen=True)
class RotationCube:
    center: tuple = (0.0, 0.0, 0.0)
    half_width: float = math.pi

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in _vec3(self.center)))
        if not self.half_width >= 0:
            raise ValueError("half_width must be non-negative")

    @property
    def volume(self) -> float:
        return (2.0 * self.half_width) ** 3

    def contains(self, r, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(_vec3(r) - np.array(self.center)) <= self.half_width + tol))


@dataclass(frozen=True)
class TranslationCuboid:
    center: tuple
    half_widths: tuple

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in _vec3(self.center)))
        hw = tuple(float(c) for c in _vec3(self.half_widths))
        if any(h < 0 for h in hw):
            raise ValueError("half_widths must be non-negative")
        object.__setattr__(self, "half_widths", hw)

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * np.array(self.half_widths)))

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.center) - np.array(self.half_widths)

    @property
    def upper(self) -> np.ndarray:
        return np.array(self.center) + np.array(self.half_widths)

    def vertices(self) -> np.ndarray:
        return np.array(self.center) + OCTANTS * np.array(self.half_widths)

    def contains(self, t, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(_vec3(t) - np.array(self.center)) <= np.array(self.half_widths) + tol))


@dataclass
class BranchRegion:
    rot: RotationCube
    trans: TranslationCuboid
    lower: float = -math.inf
    upper: float = math.inf

    @property
    def volume(self) -> float:
        return self.rot.volume * self.trans.volume

    @property
    def center_pose(self) -> Pose:
        """Centre pose; the angle-axis centre may lie outside the pi-ball, so it is wrapped."""
        return Pose.wrapped(self.rot.center, self.trans.center)

    def contains(self, r, t, tol: float = 0.0) -> bool:
        return self.rot.contains(r, tol) and self.trans.contains(t, tol)


@dataclass(frozen=True)
class PoseDomain:
    translations: tuple
    rotation: RotationCube = field(default_factory=RotationCube)
    zeta: float = 0.5

    def __post_init__(self):
        trans = tuple(self.translations)
        if not trans:
            raise ValueError("at least one translation cuboid is required")
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        object.__setattr__(self, "translations", trans)

    @property
    def volume(self) -> float:
        return sum(self.rotation.volume * c.volume for c in self.translations)


def psi_rot(cube: RotationCube) -> float:
    """Upper bound on how far any direction moves when ``r`` varies over the cube.

    Uses ``sqrt(3) * half_width``, the largest angle-axis distance from the cube
    centre; the rotation angle between two angle-axis vectors never exceeds
    their Euclidean distance.
    """
    return min(SQRT3 * cube.half_width, math.pi)


def psi_rot_batch(half_widths) -> np.ndarray:
    return np.minimum(SQRT3 * np.asarray(half_widths, dtype=float), math.pi)


def _edge_candidates(a: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Box points ``t - t0`` where ``angle(a - d, a)`` can peak: 8 vertices and one critical point per edge.

    ``a`` has shape (..., 3) and ``h`` broadcasts against it; returns ``a - d``
    for every candidate with shape (..., 32, 3) (NaN rows for edges without
    an interior critical point).
    """
    a = np.asarray(a, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), a.shape)
    verts = a[..., None, :] - OCTANTS * h[..., None, :]
    crit = []
    for k in range(3):
        for s1 in (-1.0, 1.0):
            for s2 in (-1.0, 1.0):
                sign = np.empty(3)
                sign[k] = -1.0
                sign[(k + 1) % 3] = s1
                sign[(k + 2) % 3] = s2
                u = a - sign * h
                e = np.zeros(a.shape)
                e[..., k] = 2.0 * h[..., k]
                alpha = np.sum(u * a, axis=-1)
                beta = np.sum(e * a, axis=-1)
                uu = np.sum(u * u, axis=-1)
                ue = np.sum(u * e, axis=-1)
                ee = np.sum(e * e, axis=-1)
                den = beta * ue - alpha * ee
                with np.errstate(divide="ignore", invalid="ignore"):
                    lam = (beta * uu - alpha * ue) / den
                ok = (den != 0.0) & (lam > 0.0) & (lam < 1.0)
                pt = u - np.where(ok, lam, 0.0)[..., None] * e
                crit.append(np.where(ok[..., None], pt, np.nan))
    return np.concatenate([verts, np.stack(crit, axis=-2)], axis=-2)


def _max_angle(a: np.ndarray, h: np.ndarray) -> np.ndarray:
    cand = _edge_candidates(a, h)
    a0 = np.asarray(a, dtype=float)[..., None, :]
    cr = np.linalg.norm(np.cross(cand, a0), axis=-1)
    dt = np.sum(cand * a0, axis=-1)
    ang = np.arctan2(cr, dt)
    return np.nanmax(ang, axis=-1)


def psi_trans(p, cuboid: TranslationCuboid) -> float:
    """Largest ``angle(p - t, p - t0)`` over ``t`` in the cuboid; pi if ``p`` is inside.

    Seen from ``p``, the cuboid spans a convex spherical polygon that stays in
    a hemisphere away from the antipode of ``p - t0``, so the widest direction
    lies on an edge: either at a vertex or where the cosine to ``p - t0`` is
    stationary along the edge. Both kinds of candidate are checked, which
    makes the value exact (vertices alone can fall short when ``p`` is close
    to a face).
    """
    p = _vec3(p)
    if cuboid.contains(p):
        return math.pi
    a0 = p - np.array(cuboid.center)
    return float(_max_angle(a0, np.array(cuboid.half_widths)))


def psi_trans_batch(points: np.ndarray, centers: np.ndarray, half_widths: np.ndarray) -> np.ndarray:
    """:func:`psi_trans` for every (cuboid, point) pair; returns shape (M, n)."""
    p = np.asarray(points, dtype=float).reshape(1, -1, 3)
    c = np.asarray(centers, dtype=float).reshape(-1, 1, 3)
    h = np.asarray(half_widths, dtype=float).reshape(-1, 1, 3)
    a0 = p - c
    psi = _max_angle(a0, np.broadcast_to(h, a0.shape))
    inside = np.all(np.abs(a0) <= h, axis=-1)
    return np.where(inside, math.pi, psi)


def translation_uncertainty(means: np.ndarray, cuboid: TranslationCuboid) -> float:
    """Largest translation uncertainty angle over a set of Gaussian means."""
    return float(np.max(psi_trans_batch(means, np.array([cuboid.center]), np.array([cuboid.half_widths]))))


def split_rotation(cube: RotationCube) -> list:
    h = cube.half_width / 2.0
    c = np.array(cube.center)
    return [RotationCube(c + s * h, h) for s in OCTANTS]


def split_translation(cuboid: TranslationCuboid) -> list:
    h = np.array(cuboid.half_widths) / 2.0
    c = np.array(cuboid.center)
    return [TranslationCuboid(c + s * h, h) for s in OCTANTS]


def subdivide_adaptive(b: BranchRegion, model, image=None) -> list:
    """Split the rotation or the translation half of ``b`` into octants.

    The half with the larger angular uncertainty is split (ties go to
    rotation): ``psi_rot`` of the rotation cube against the largest
    ``psi_trans`` over the Gaussian means of ``model``. ``image`` is accepted
    for symmetry with the bound evaluator but does not enter the decision
    because ``psi_rot`` is direction independent.
    """
    means = model.means if hasattr(model, "means") else np.asarray(model, dtype=float).reshape(-1, 3)
    rot_ok = b.rot.half_width > 0
    trans_ok = any(h > 0 for h in b.trans.half_widths)
    if not rot_ok and not trans_ok:
        raise DomainSplitError("branch has zero size in both rotation and translation")
    u_r = psi_rot(b.rot)
    u_t = translation_uncertainty(means, b.trans) if trans_ok else -1.0
    if rot_ok and u_r >= u_t:
        return [BranchRegion(c, b.trans) for c in split_rotation(b.rot)]
    return [BranchRegion(b.rot, c) for c in split_translation(b.trans)]


def box_distance_range(p, centers: np.ndarray, half_widths: np.ndarray):
    """Min and max Euclidean distance from points to boxes; returns (M, n) arrays."""
    p = np.asarray(p, dtype=float).reshape(1, -1, 3)
    c = np.asarray(centers, dtype=float).reshape(-1, 1, 3)
    h = np.asarray(half_widths, dtype=float).reshape(-1, 1, 3)
    off = np.abs(p - c)
    dmin = np.linalg.norm(np.maximum(off - h, 0.0), axis=-1)
    dmax = np.linalg.norm(off + h, axis=-1)
    return dmin, dmax


def feasible_wrt_zeta(cuboid: TranslationCuboid, model, zeta: float) -> bool:
    """False only if the whole cuboid lies within ``zeta`` of a single Gaussian mean."""
    if not zeta > 0:
        raise ValueError("zeta must be positive")
    means = model.means if hasattr(model, "means") else np.asarray(model, dtype=float).reshape(-1, 3)
    _, dmax = box_distance_range(means, np.array([cuboid.center]), np.array([cuboid.half_widths]))
    return not bool(np.any(dmax < zeta))


def torus_cover(major_radius: float, minor_radius: float, center=(0.0, 0.0, 0.0),
                axis=(0.0, 0.0, 1.0)) -> list:
    """Axis-aligned cuboids whose union contains the solid torus.

    The circle is cut into ``ceil(2 pi R / r)`` equal angular sectors and each
    sector of the solid torus is replaced by its exact axis-aligned bounding
    box, so coverage holds by construction.
    """
    R, m = float(major_radius), float(minor_radius)
    if not (R > m > 0):
        raise ValueError("torus radii must satisfy major > minor > 0")
    c = _vec3(center)
    n = _vec3(axis)
    n = n / np.linalg.norm(n)
    e1 = np.cross(n, [1.0, 0.0, 0.0])
    if np.linalg.norm(e1) < 1e-6:
        e1 = np.cross(n, [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    steps = int(math.ceil(2.0 * math.pi * R / m))
    dphi = 2.0 * math.pi / steps
    out = []
    for k in range(steps):
        lo = hi = None
        # extreme coordinates of the sector's circle arc occur at its ends or at axis-aligned tangents
        phis = [k * dphi, (k + 1) * dphi]
        for axis_i in range(3):
            a, b = e1[axis_i], e2[axis_i]
            base = math.atan2(b, a)
            for cand in (base, base + math.pi):
                cand = (cand - k * dphi) % (2.0 * math.pi)
                if cand <= dphi:
                    phis.append(k * dphi + cand)
        pts = np.array([c + R * (math.cos(p) * e1 + math.sin(p) * e2) for p in phis])
        # a tube of radius m around the arc: offset every coordinate by m times the cross-section reach
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        reach = np.empty(3)
        for axis_i in range(3):
            # cross-section disk at angle p spans +-m*sqrt(n_i^2 + radial_i^2); bound by its max over the sector
            radial = np.array([math.cos(p) * e1[axis_i] + math.sin(p) * e2[axis_i] for p in phis])
            reach[axis_i] = m * math.sqrt(n[axis_i] ** 2 + float(np.max(radial ** 2)))
        reach = np.minimum(reach, m)
        lo, hi = lo - reach, hi + reach
        out.append(TranslationCuboid((lo + hi) / 2.0, (hi - lo) / 2.0))
    return out
