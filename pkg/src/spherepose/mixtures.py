"""Mixture construction from raw point and bearing sets.

Point-sets are clustered with DP-means and bearing sets with its spherical
analogue; each cluster then gets a closed-form maximum-likelihood component.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Hashable, Optional

import numpy as np

from .sphere_stats import IsotropicGaussian, UnitVector3, VmfComponent

log = logging.getLogger(__name__)

MAX_ITERATIONS = 100
KAPPA_MIN = 1e-3
KAPPA_MAX = 1e5
_WEIGHT_TOL = 1e-9


class MixtureError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledPointSet:
    points: np.ndarray
    labels: Optional[tuple] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != len(pts):
                raise MixtureError(f"{len(labels)} labels for {len(pts)} points")
            object.__setattr__(self, "labels", labels)


@dataclass(frozen=True)
class LabeledBearingSet:
    bearings: np.ndarray
    labels: Optional[tuple] = None

    def __post_init__(self):
        b = np.asarray(self.bearings, dtype=float).reshape(-1, 3)
        n = np.linalg.norm(b, axis=1)
        if np.any(n == 0) or not np.all(np.isfinite(n)):
            raise MixtureError("bearing vectors must be non-zero and finite")
        object.__setattr__(self, "bearings", b / n[:, None])
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != len(b):
                raise MixtureError(f"{len(labels)} labels for {len(b)} bearings")
            object.__setattr__(self, "labels", labels)


@dataclass(frozen=True)
class Gmm:
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise MixtureError("a GMM needs at least one component")
        total = sum(c.weight for c in comps)
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise MixtureError(f"GMM weights sum to {total}, not 1")
        object.__setattr__(self, "components", comps)

    @property
    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])

    @property
    def variances(self) -> np.ndarray:
        return np.array([c.variance for c in self.components])

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    def __len__(self):
        return len(self.components)


@dataclass(frozen=True)
class Vmfmm:
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise MixtureError("a vMF mixture needs at least one component")
        total = sum(c.weight for c in comps)
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise MixtureError(f"vMF mixture weights sum to {total}, not 1")
        object.__setattr__(self, "components", comps)

    @property
    def directions(self) -> np.ndarray:
        return np.array([c.mean_direction.as_array() for c in self.components])

    @property
    def concentrations(self) -> np.ndarray:
        return np.array([c.concentration for c in self.components])

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    def __len__(self):
        return len(self.components)


@dataclass(frozen=True)
class SemanticClass:
    label: Hashable
    weight: float
    gmm: Gmm
    vmfmm: Vmfmm


@dataclass(frozen=True)
class SemanticMixturePair:
    classes: tuple
    warnings: tuple = field(default=())

    def __post_init__(self):
        classes = tuple(self.classes)
        if not classes:
            raise MixtureError("at least one class is required")
        if any(c.weight < 0 for c in classes):
            raise MixtureError("class weights must be non-negative")
        total = sum(c.weight for c in classes)
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise MixtureError(f"class weights sum to {total}, not 1")
        object.__setattr__(self, "classes", classes)

    @classmethod
    def single(cls, gmm: Gmm, vmfmm: Vmfmm) -> "SemanticMixturePair":
        return cls((SemanticClass(None, 1.0, gmm, vmfmm),))


@dataclass
class Clustering:
    """Result of a DP-means style clustering run."""

    assignments: np.ndarray
    centers: np.ndarray
    iterations: int
    converged: bool
    objective_history: list = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return len(self.centers)

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == k)


def _visit_order(n: int, seed: Optional[int]) -> np.ndarray:
    if seed is None:
        return np.arange(n)
    return np.random.default_rng(seed).permutation(n)


def _compact(z: np.ndarray, centers: list):
    """Drop empty clusters and relabel to 0..k-1 in order of first use."""
    used = np.unique(z)
    remap = np.full(len(centers), -1)
    remap[used] = np.arange(len(used))
    return remap[z], [centers[k] for k in used]


def dp_means_objective(points: np.ndarray, z: np.ndarray, centers: np.ndarray, lambda_p: float) -> float:
    """Within-cluster squared distance plus ``lambda_p**2`` per cluster."""
    points = np.asarray(points, dtype=float)
    sq = np.sum((points - centers[z]) ** 2)
    return float(sq + lambda_p ** 2 * len(centers))


def dp_means(points, lambda_p: float, *, seed: Optional[int] = None, max_iter: int = MAX_ITERATIONS) -> Clustering:
    """Cluster 3D points with DP-means (hard small-variance DP mixture).

    A point farther than ``lambda_p`` from every current centre opens a new
    cluster at its own location. Starts from one cluster at the global mean and
    visits points in input order (or a ``seed``-shuffled order).
    """
    x = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(x) == 0:
        raise MixtureError("dp_means needs at least one point")
    if not lambda_p > 0:
        raise MixtureError("lambda_p must be positive")
    lam2 = lambda_p * lambda_p
    order = _visit_order(len(x), seed)
    z = np.zeros(len(x), dtype=np.int64)
    centers = [x.mean(axis=0)]
    history = [dp_means_objective(x, z, np.array(centers), lambda_p)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        changed = False
        c = np.array(centers)
        for n in order:
            d2 = np.sum((c - x[n]) ** 2, axis=1)
            k = int(np.argmin(d2))
            if d2[k] > lam2:
                centers.append(x[n].copy())
                c = np.array(centers)
                k = len(centers) - 1
            if k != z[n]:
                z[n] = k
                changed = True
        z, centers = _compact(z, centers)
        centers = [x[z == k].mean(axis=0) for k in range(len(centers))]
        history.append(dp_means_objective(x, z, np.array(centers), lambda_p))
        if not changed:
            converged = True
            break
    if not converged:
        log.warning("dp_means hit the %d iteration cap without converging", max_iter)
    return Clustering(z, np.array(centers), it, converged, history)


def dp_vmf_means(bearings, lambda_f: float, *, seed: Optional[int] = None,
                 max_iter: int = MAX_ITERATIONS) -> Clustering:
    """Spherical DP-means: geodesic threshold ``lambda_f`` (radians), centres are mean directions."""
    f = np.asarray(bearings, dtype=float).reshape(-1, 3)
    if len(f) == 0:
        raise MixtureError("dp_vmf_means needs at least one bearing")
    if not 0 < lambda_f < math.pi:
        raise MixtureError("lambda_f must lie in (0, pi)")
    f = f / np.linalg.norm(f, axis=1, keepdims=True)
    cos_lam = math.cos(lambda_f)
    order = _visit_order(len(f), seed)

    def mean_dir(v):
        s = v.sum(axis=0)
        n = np.linalg.norm(s)
        # an antipodally balanced set has no mean direction; fall back to its first member
        return s / n if n > 1e-12 else v[0].copy()

    z = np.zeros(len(f), dtype=np.int64)
    centers = [mean_dir(f)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        changed = False
        c = np.array(centers)
        for n in order:
            cs = c @ f[n]
            k = int(np.argmax(cs))
            if cs[k] < cos_lam:
                centers.append(f[n].copy())
                c = np.array(centers)
                k = len(centers) - 1
            if k != z[n]:
                z[n] = k
                changed = True
        z, centers = _compact(z, centers)
        centers = [mean_dir(f[z == k]) for k in range(len(centers))]
        if not changed:
            converged = True
            break
    if not converged:
        log.warning("dp_vmf_means hit the %d iteration cap without converging", max_iter)
    return Clustering(z, np.array(centers), it, converged, [])


def _split(data, clusters) -> list:
    if isinstance(clusters, Clustering):
        if data is None:
            raise MixtureError("a Clustering must be fitted together with its data")
        data = np.asarray(data, dtype=float).reshape(-1, 3)
        return [data[clusters.members(k)] for k in range(clusters.n_clusters)]
    return [np.asarray(c, dtype=float).reshape(-1, 3) for c in clusters]


def fit_gaussian_components(clusters, points=None, *, sigma2_min: float) -> Gmm:
    """Isotropic ML Gaussian per cluster, variance floored at ``sigma2_min``.

    ``clusters`` is either a sequence of (N_k, 3) arrays or a :class:`Clustering`
    together with the ``points`` it was computed on.
    """
    groups = _split(points, clusters)
    if any(len(g) == 0 for g in groups):
        raise MixtureError("empty cluster")
    total = sum(len(g) for g in groups)
    comps = []
    for g in groups:
        mean = g.mean(axis=0)
        var = float(np.sum((g - mean) ** 2)) / (3.0 * len(g))
        comps.append((mean, max(var, sigma2_min), len(g) / total))
    wsum = sum(c[2] for c in comps)
    return Gmm(tuple(IsotropicGaussian(m, v, w / wsum) for m, v, w in comps))


def banerjee_kappa(rbar: float) -> float:
    """Approximate vMF ML concentration on S^2 from the mean resultant length."""
    return rbar * (3.0 - rbar * rbar) / (1.0 - rbar * rbar)


def fit_vmf_components(clusters, bearings=None, *, kappa_min: float = KAPPA_MIN,
                       kappa_max: float = KAPPA_MAX) -> Vmfmm:
    groups = _split(bearings, clusters)
    if any(len(g) == 0 for g in groups):
        raise MixtureError("empty cluster")
    total = sum(len(g) for g in groups)
    comps = []
    for g in groups:
        g = g / np.linalg.norm(g, axis=1, keepdims=True)
        s = g.sum(axis=0)
        norm = float(np.linalg.norm(s))
        if norm <= 1e-12 * len(g):
            raise MixtureError("cluster has a zero resultant vector")
        rbar = min(norm / len(g), 1.0)
        kappa = kappa_max if rbar >= 1.0 else banerjee_kappa(rbar)
        kappa = min(max(kappa, kappa_min), kappa_max)
        comps.append((s / norm, kappa, len(g) / total))
    wsum = sum(c[2] for c in comps)
    return Vmfmm(tuple(VmfComponent(UnitVector3.from_array(m), k, w / wsum) for m, k, w in comps))


@dataclass(frozen=True)
class MixtureSettings:
    """Scale parameters and resolution floors for mixture generation.

    ``sigma2_min`` and ``kappa_max`` default to values derived from the scales:
    the floor standard deviation is a fifth of the clustering scale, i.e.
    ``sigma2_min = (lambda_p / 5)**2`` and ``kappa_max = (5 / lambda_f)**2``,
    so singleton clusters in both mixtures are comparably sharp.
    """

    lambda_p: float = 0.25
    lambda_f: float = math.radians(2.0)
    sigma2_min: Optional[float] = None
    kappa_min: float = KAPPA_MIN
    kappa_max: Optional[float] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.lambda_p > 0 or not 0 < self.lambda_f < math.pi:
            raise MixtureError("scale parameters must be positive")

    @property
    def effective_sigma2_min(self) -> float:
        return self.sigma2_min if self.sigma2_min is not None else (self.lambda_p / 5.0) ** 2

    @property
    def effective_kappa_max(self) -> float:
        return self.kappa_max if self.kappa_max is not None else (5.0 / self.lambda_f) ** 2


def build_gmm(points, settings: MixtureSettings) -> Gmm:
    x = np.asarray(points, dtype=float).reshape(-1, 3)
    cl = dp_means(x, settings.lambda_p, seed=settings.seed)
    return fit_gaussian_components(cl, x, sigma2_min=settings.effective_sigma2_min)


def build_vmfmm(bearings, settings: MixtureSettings) -> Vmfmm:
    f = np.asarray(bearings, dtype=float).reshape(-1, 3)
    cl = dp_vmf_means(f, settings.lambda_f, seed=settings.seed)
    return fit_vmf_components(cl, f, kappa_min=settings.kappa_min, kappa_max=settings.effective_kappa_max)


def build_semantic_mixtures(points: LabeledPointSet, bearings: LabeledBearingSet,
                            settings: MixtureSettings = MixtureSettings(),
                            class_weights: Optional[dict] = None) -> SemanticMixturePair:
    """One (GMM, vMFMM) pair per class present in both modalities.

    Classes seen in only one modality are dropped and reported in
    ``warnings``. Default class weights are uniform over the retained classes;
    explicit ``class_weights`` are renormalized over them.
    """
    if (points.labels is None) != (bearings.labels is None):
        raise MixtureError("labels must be given for both modalities or for neither")
    if points.labels is None:
        return SemanticMixturePair.single(build_gmm(points.points, settings),
                                          build_vmfmm(bearings.bearings, settings))

    p_labels = np.array(points.labels, dtype=object)
    f_labels = np.array(bearings.labels, dtype=object)
    p_set = list(dict.fromkeys(points.labels))
    f_set = set(bearings.labels)
    shared = [c for c in p_set if c in f_set]
    if not shared:
        raise MixtureError("no class appears in both the point-set and the image")
    warnings = []
    for c in p_set:
        if c not in f_set:
            warnings.append(f"class {c!r} appears only in the point-set; dropped")
    for c in dict.fromkeys(bearings.labels):
        if c not in set(p_set):
            warnings.append(f"class {c!r} appears only in the image; dropped")
    for w in warnings:
        log.warning(w)

    if class_weights is None:
        raw = {c: 1.0 for c in shared}
    else:
        missing = [c for c in shared if c not in class_weights]
        if missing:
            raise MixtureError(f"no class weight given for {missing}")
        raw = {c: float(class_weights[c]) for c in shared}
        if any(v < 0 for v in raw.values()) or sum(raw.values()) <= 0:
            raise MixtureError("class weights must be non-negative with a positive sum")
    total = sum(raw.values())
    classes = []
    for c in shared:
        gmm = build_gmm(points.points[p_labels == c], settings)
        vmm = build_vmfmm(bearings.bearings[f_labels == c], settings)
        classes.append(SemanticClass(c, raw[c] / total, gmm, vmm))
    return SemanticMixturePair(tuple(classes), tuple(warnings))
