"""L2 distance between a projected GMM and a vMF mixture, as a function of pose.

With ``T(mu) = R (mu - t)`` and each Gaussian projected to the vMF with
``kappa(t) = (|mu - t| / sigma)^2 + 1``, the pose-dependent part of the L2
distance is

    f(R, t) = sum_ij phi_i phi_j Z(K_ij(t)) / (Z(kappa_i) Z(kappa_j))
              - 2 sum_ij phi_i psi_j Z(K'_ij(R, t)) / (Z(kappa_i) Z(kappa'_j))

with ``K`` the norm of the summed concentration-scaled directions. All
ratios are formed as ``exp(log Z(K) - log Z(a) - log Z(b))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mixtures import Gmm, SemanticMixturePair, Vmfmm
from .se3 import Pose, rodrigues, rodrigues_batch, skew
from .sphere_stats import DegenerateProjectionError, IsotropicGaussian, log_z_unchecked, sphere_grid

QUADRATURE_KAPPA_MAX = 100.0


class InfeasiblePoseError(ValueError):
    """The camera centre lies within zeta of a Gaussian mean."""


def langevin(x):
    """``d log Z / dx = coth(x) - 1/x``."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-3
    xs = np.where(small, 1.0, x)
    big = 1.0 + 2.0 / np.expm1(2.0 * np.minimum(xs, 350.0)) - 1.0 / xs
    return np.where(small, x / 3.0 - x ** 3 / 45.0, big)


def langevin_over_x(x):
    """``langevin(x) / x``, finite at 0 where it tends to 1/3."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-3
    xs = np.where(small, 1.0, x)
    return np.where(small, 1.0 / 3.0 - x * x / 45.0, langevin(xs) / xs)


@dataclass(frozen=True)
class ClassTerms:
    """Array form of one (GMM, vMF mixture) pair."""

    weight: float
    means: np.ndarray
    sigma2: np.ndarray
    phi1: np.ndarray
    dirs: np.ndarray
    kappa2: np.ndarray
    phi2: np.ndarray
    log_z2: np.ndarray

    @classmethod
    def from_mixtures(cls, gmm: Gmm, vmm: Vmfmm, weight: float = 1.0) -> "ClassTerms":
        k2 = vmm.concentrations
        return cls(float(weight), gmm.means, gmm.variances, gmm.weights,
                   vmm.directions, k2, vmm.weights, np.asarray(log_z_unchecked(k2)))

    @property
    def n1(self) -> int:
        return len(self.phi1)

    @property
    def n2(self) -> int:
        return len(self.phi2)

    def image_self_term(self) -> float:
        w = self.kappa2[:, None] * self.dirs
        K = np.linalg.norm(w[:, None, :] + w[None, :, :], axis=-1)
        ell = log_z_unchecked(K) - self.log_z2[:, None] - self.log_z2[None, :]
        return float(np.sum(self.phi2[:, None] * self.phi2[None, :] * np.exp(ell)))


@dataclass(frozen=True)
class ObjectiveContext:
    classes: tuple
    zeta: float = 0.5

    def __post_init__(self):
        classes = tuple(self.classes)
        if not classes:
            raise ValueError("context needs at least one class")
        total = sum(c.weight for c in classes)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"class weights sum to {total}, not 1")
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        object.__setattr__(self, "classes", classes)

    @classmethod
    def from_pair(cls, pair: SemanticMixturePair, zeta: float = 0.5) -> "ObjectiveContext":
        return cls(tuple(ClassTerms.from_mixtures(c.gmm, c.vmfmm, c.weight) for c in pair.classes), zeta)

    @classmethod
    def from_mixtures(cls, gmm: Gmm, vmm: Vmfmm, zeta: float = 0.5) -> "ObjectiveContext":
        return cls((ClassTerms.from_mixtures(gmm, vmm),), zeta)

    @property
    def all_means(self) -> np.ndarray:
        return np.concatenate([c.means for c in self.classes])

    def image_constant(self) -> float:
        """Pose-independent image self-term, weighted over classes like ``f``."""
        return sum(c.weight * c.image_self_term() for c in self.classes)


def kappa_of_t(g: IsotropicGaussian, t) -> float:
    d = float(np.linalg.norm(g.mean_array - np.asarray(t, dtype=float)))
    if d == 0.0:
        raise DegenerateProjectionError("camera centre coincides with a Gaussian mean")
    return d * d / g.variance + 1.0


def _scaled_direction(g: IsotropicGaussian, t) -> np.ndarray:
    a = g.mean_array - np.asarray(t, dtype=float)
    d = float(np.linalg.norm(a))
    if d == 0.0:
        raise DegenerateProjectionError("camera centre coincides with a Gaussian mean")
    return kappa_of_t(g, t) * a / d


def pair_concentration_self(model: Gmm, i: int, j: int, t) -> float:
    """``|kappa_i u_i + kappa_j u_j|`` for projected Gaussians ``i`` and ``j``."""
    gi, gj = model.components[i], model.components[j]
    return float(np.linalg.norm(_scaled_direction(gi, t) + _scaled_direction(gj, t)))


def pair_concentration_cross(model: Gmm, image: Vmfmm, i: int, j: int, R, t) -> float:
    """``|kappa_i R u_i + kappa'_j mu'_j|`` for Gaussian ``i`` and image component ``j``."""
    v = image.components[j]
    w = np.asarray(R, dtype=float) @ _scaled_direction(model.components[i], t)
    return float(np.linalg.norm(w + v.concentration * v.mean_direction.as_array()))


def _projection(c: ClassTerms, t: np.ndarray):
    a = c.means - t
    d = np.linalg.norm(a, axis=1)
    if np.any(d == 0.0):
        raise DegenerateProjectionError("camera centre coincides with a Gaussian mean")
    kappa = d * d / c.sigma2 + 1.0
    return a, d, kappa


def check_feasible(ctx: ObjectiveContext, t) -> None:
    t = np.asarray(t, dtype=float)
    d = np.linalg.norm(ctx.all_means - t, axis=1)
    if np.any(d < ctx.zeta):
        raise InfeasiblePoseError(f"camera centre is {d.min():.6g} from a Gaussian mean (zeta = {ctx.zeta})")


def is_feasible(ctx: ObjectiveContext, t) -> bool:
    d = np.linalg.norm(ctx.all_means - np.asarray(t, dtype=float), axis=1)
    return bool(np.all(d >= ctx.zeta))


def _class_value(c: ClassTerms, R: np.ndarray, t: np.ndarray) -> float:
    a, d, kappa = _projection(c, t)
    w = (kappa / d)[:, None] * a
    lz1 = log_z_unchecked(kappa)
    K = np.linalg.norm(w[:, None, :] + w[None, :, :], axis=-1)
    self_t = np.sum(c.phi1[:, None] * c.phi1[None, :] * np.exp(log_z_unchecked(K) - lz1[:, None] - lz1[None, :]))
    Rw = w @ R.T
    Kx = np.linalg.norm(Rw[:, None, :] + (c.kappa2[:, None] * c.dirs)[None, :, :], axis=-1)
    cross = np.sum(c.phi1[:, None] * c.phi2[None, :] * np.exp(log_z_unchecked(Kx) - lz1[:, None] - c.log_z2[None, :]))
    return float(self_t - 2.0 * cross)


def _pose_arrays(pose):
    if isinstance(pose, Pose):
        return pose.R, pose.t_array
    r, t = pose
    return rodrigues(r), np.asarray(t, dtype=float)


def objective_value(ctx: ObjectiveContext, pose, *, check_zeta: bool = True) -> float:
    """``f(R, t)``; a semantic context returns the class-weighted sum."""
    R, t = _pose_arrays(pose)
    if check_zeta:
        check_feasible(ctx, t)
    return sum(c.weight * _class_value(c, R, t) for c in ctx.classes)


def class_values(ctx: ObjectiveContext, pose) -> list:
    """Unweighted per-class objective values."""
    R, t = _pose_arrays(pose)
    return [_class_value(c, R, t) for c in ctx.classes]


def rodrigues_derivatives(r) -> np.ndarray:
    """``dR/dr_k`` for k = 0, 1, 2 as a (3, 3, 3) array."""
    r = np.asarray(r, dtype=float)
    theta2 = float(r @ r)
    E = np.eye(3)
    if theta2 < 1e-12:
        K = skew(r)
        return np.array([skew(E[k]) + 0.5 * (skew(E[k]) @ K + K @ skew(E[k])) for k in range(3)])
    R = rodrigues(r)
    K = skew(r)
    I_R = np.eye(3) - R
    return np.array([(r[k] * K + skew(np.cross(r, I_R[:, k]))) @ R / theta2 for k in range(3)])


def _class_value_and_grad(c: ClassTerms, R: np.ndarray, dR: np.ndarray, t: np.ndarray):
    a, d, kappa = _projection(c, t)
    u = a / d[:, None]
    cfac = d / c.sigma2 + 1.0 / d
    cder = 1.0 / c.sigma2 - 1.0 / (d * d)
    w = cfac[:, None] * a
    lz1 = log_z_unchecked(kappa)
    Lk = langevin(kappa)
    grad_kappa = -(2.0 * d / c.sigma2)[:, None] * u  # d kappa_i / dt

    def jw(vecs):
        # (d w_i / dt) applied to vecs[i]; the Jacobian is symmetric
        return -cfac[:, None] * vecs - (cder * d * np.einsum("ij,ij->i", u, vecs))[:, None] * u

    S = w[:, None, :] + w[None, :, :]
    K = np.linalg.norm(S, axis=-1)
    T = c.phi1[:, None] * c.phi1[None, :] * np.exp(log_z_unchecked(K) - lz1[:, None] - lz1[None, :])
    q = langevin_over_x(K)
    g_self = 2.0 * np.sum(jw(np.einsum("ij,ijk->ik", T * q, S)), axis=0) \
        - 2.0 * np.sum((T.sum(axis=1) * Lk)[:, None] * grad_kappa, axis=0)

    Rw = w @ R.T
    C = Rw[:, None, :] + (c.kappa2[:, None] * c.dirs)[None, :, :]
    Kx = np.linalg.norm(C, axis=-1)
    X = c.phi1[:, None] * c.phi2[None, :] * np.exp(log_z_unchecked(Kx) - lz1[:, None] - c.log_z2[None, :])
    qx = langevin_over_x(Kx)
    XC = np.einsum("ij,ijk->ik", X * qx, C)  # sum_j X q C_ij, shape (n1, 3)
    g_cross_t = np.sum(jw(XC @ R), axis=0) - np.sum((X.sum(axis=1) * Lk)[:, None] * grad_kappa, axis=0)
    M = XC.T @ w  # sum_ij X q C_ij w_i^T
    g_cross_r = np.einsum("kab,ab->k", dR, M)

    value = float(np.sum(T) - 2.0 * np.sum(X))
    grad = np.concatenate([-2.0 * g_cross_r, g_self - 2.0 * g_cross_t])
    return value, grad


def value_and_gradient(ctx: ObjectiveContext, r, t, *, check_zeta: bool = True):
    r = np.asarray(r, dtype=float)
    t = np.asarray(t, dtype=float)
    if check_zeta:
        check_feasible(ctx, t)
    R = rodrigues(r)
    dR = rodrigues_derivatives(r)
    value = 0.0
    grad = np.zeros(6)
    for c in ctx.classes:
        v, g = _class_value_and_grad(c, R, dR, t)
        value += c.weight * v
        grad += c.weight * g
    return value, grad


def objective_gradient(ctx: ObjectiveContext, pose, *, check_zeta: bool = True) -> np.ndarray:
    """Gradient of ``f`` with respect to ``(r, t)`` as a 6-vector."""
    if isinstance(pose, Pose):
        r, t = pose.r_array, pose.t_array
    else:
        r, t = pose
    return value_and_gradient(ctx, r, t, check_zeta=check_zeta)[1]


def objective_values(ctx: ObjectiveContext, rs, ts, *, chunk_elems: int = 2_000_000) -> np.ndarray:
    """``f`` at many poses; infeasible translations give ``+inf``."""
    rs = np.asarray(rs, dtype=float).reshape(-1, 3)
    ts = np.asarray(ts, dtype=float).reshape(-1, 3)
    out = np.empty(len(rs))
    n_max = max(c.n1 * (c.n1 + c.n2) for c in ctx.classes)
    step = max(1, chunk_elems // n_max)
    means = ctx.all_means
    for s in range(0, len(rs), step):
        r = rs[s:s + step]
        t = ts[s:s + step]
        R = rodrigues_batch(r)
        total = np.zeros(len(r))
        for c in ctx.classes:
            a = c.means[None, :, :] - t[:, None, :]
            d = np.linalg.norm(a, axis=-1)
            d = np.where(d == 0.0, np.nan, d)
            kappa = d * d / c.sigma2 + 1.0
            w = (kappa / d)[..., None] * a
            lz1 = log_z_unchecked(kappa)
            K = np.linalg.norm(w[:, :, None, :] + w[:, None, :, :], axis=-1)
            self_t = np.einsum("mij,i,j->m", np.exp(log_z_unchecked(K) - lz1[:, :, None] - lz1[:, None, :]),
                               c.phi1, c.phi1)
            Rw = np.einsum("mab,mib->mia", R, w)
            Kx = np.linalg.norm(Rw[:, :, None, :] + (c.kappa2[:, None] * c.dirs)[None, None], axis=-1)
            cross = np.einsum("mij,i,j->m", np.exp(log_z_unchecked(Kx) - lz1[:, :, None] - c.log_z2[None, None, :]),
                              c.phi1, c.phi2)
            total += c.weight * (self_t - 2.0 * cross)
        dmin = np.min(np.linalg.norm(means[None] - t[:, None], axis=-1), axis=1)
        total = np.where(dmin < ctx.zeta, np.inf, total)
        out[s:s + step] = total
    return out


def _class_quadrature(c: ClassTerms, R: np.ndarray, t: np.ndarray, dirs: np.ndarray, w: np.ndarray) -> float:
    a, d, kappa = _projection(c, t)
    if np.any(kappa > QUADRATURE_KAPPA_MAX) or np.any(c.kappa2 > QUADRATURE_KAPPA_MAX):
        raise ValueError(f"concentrations above {QUADRATURE_KAPPA_MAX} are not resolved by the grid")
    mu1 = (a / d[:, None]) @ R.T
    p1 = np.zeros(len(dirs))
    for m, k, phi in zip(mu1, kappa, c.phi1):
        p1 += phi * np.exp(k * (dirs @ m) - math.log(2.0 * math.pi) - log_z_unchecked(k))
    p2 = np.zeros(len(dirs))
    for m, k, phi in zip(c.dirs, c.kappa2, c.phi2):
        p2 += phi * np.exp(k * (dirs @ m) - math.log(2.0 * math.pi) - log_z_unchecked(k))
    return float(np.sum(w * (p1 - p2) ** 2))


def l2_quadrature(ctx: ObjectiveContext, pose, n_nodes: int = 2_000_000) -> float:
    """Numerical ``int_{S^2} (p_model - p_image)^2 df`` on a latitude-longitude grid.

    Independent of the closed form: densities are evaluated pointwise and
    integrated with cell-area weights. Semantic contexts return the
    class-weighted sum of per-class distances.
    """
    if n_nodes < 2_000_000:
        raise ValueError("n_nodes must be at least 2e6")
    R, t = _pose_arrays(pose)
    dirs, w = sphere_grid(n_nodes)
    return sum(c.weight * _class_quadrature(c, R, t, dirs, w) for c in ctx.classes)
