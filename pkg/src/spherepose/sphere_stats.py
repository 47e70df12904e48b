"""Densities on the unit sphere and the Gaussian-to-sphere projection.

Everything here is a pure function of its arguments. Concentrations above
``LOG_DOMAIN_THRESHOLD`` are handled in log space so that ``exp(kappa)`` never
has to be formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

LOG_DOMAIN_THRESHOLD = 30.0
_UNIT_TOL = 1e-6
_SMALL_KAPPA = 1e-6


class DomainError(ValueError):
    """A parameter lies outside the domain of a density."""


class DegenerateProjectionError(ValueError):
    """A Gaussian mean coincides with the projection centre."""


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {np.shape(v)}")
    return a


@dataclass(frozen=True)
class UnitVector3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("cannot build a unit vector from a zero or non-finite input")
        if abs(n - 1.0) > 0.0:
            object.__setattr__(self, "x", self.x / n)
            object.__setattr__(self, "y", self.y / n)
            object.__setattr__(self, "z", self.z / n)

    @classmethod
    def from_array(cls, v, *, strict: bool = False) -> "UnitVector3":
        """Normalize ``v``. With ``strict`` the input must already be unit length to 1e-6."""
        a = _as_vec3(v)
        n = float(np.linalg.norm(a))
        if strict and abs(n - 1.0) > _UNIT_TOL:
            raise ValueError(f"vector norm {n} is not within {_UNIT_TOL} of 1")
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class VmfComponent:
    mean_direction: UnitVector3
    concentration: float
    weight: float = 1.0

    def __post_init__(self):
        if not (self.concentration > 0 and np.isfinite(self.concentration)):
            raise DomainError(f"concentration must be positive and finite, got {self.concentration}")
        if not self.weight >= 0:
            raise DomainError(f"weight must be non-negative, got {self.weight}")


@dataclass(frozen=True)
class IsotropicGaussian:
    mean: tuple
    variance: float
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mean", tuple(float(c) for c in _as_vec3(self.mean)))
        if not (self.variance > 0 and np.isfinite(self.variance)):
            raise DomainError(f"variance must be positive and finite, got {self.variance}")
        if not self.weight >= 0:
            raise DomainError(f"weight must be non-negative, got {self.weight}")

    @property
    def mean_array(self) -> np.ndarray:
        return np.array(self.mean)


def _check_kappa(kappa) -> np.ndarray:
    k = np.asarray(kappa, dtype=float)
    if not np.all(np.isfinite(k)) or np.any(k <= 0):
        raise DomainError(f"concentration must be positive and finite, got {kappa}")
    return k


def log_z_unchecked(x):
    """log Z(x) for x >= 0 without argument validation; Z(0) is taken as its limit 2.

    Stable for every magnitude: ``x + log(1 - exp(-2x)) - log(x)`` via ``expm1``,
    switching to the Taylor series ``log 2 + x^2/6`` below 1e-6.
    """
    x = np.asarray(x, dtype=float)
    small = x < _SMALL_KAPPA
    xs = np.where(small, 1.0, x)
    out = xs + np.log(-np.expm1(-2.0 * xs)) - np.log(xs)
    out = np.where(small, math.log(2.0) + x * x / 6.0, out)
    return out if out.ndim else float(out)


def log_z_eval(kappa):
    """Natural log of ``Z(kappa) = (e^kappa - e^-kappa) / kappa``."""
    return log_z_unchecked(_check_kappa(kappa))


def z_eval(kappa):
    """``Z(kappa) = (e^kappa - e^-kappa) / kappa``, the vMF normalizer up to 2*pi.

    Evaluated directly up to kappa = 30 and as ``exp(log Z)`` above that, which
    overflows to ``inf`` only past kappa ~ 716.
    """
    k = _check_kappa(kappa)
    with np.errstate(over="ignore"):
        direct = 2.0 * np.sinh(np.minimum(k, LOG_DOMAIN_THRESHOLD)) / k
        out = np.where(k > LOG_DOMAIN_THRESHOLD, np.exp(log_z_unchecked(k)), direct)
    return out if out.ndim else float(out)


def log_vmf_density(f, mu, kappa) -> float:
    f = _as_vec3(f.as_array() if isinstance(f, UnitVector3) else f)
    mu = _as_vec3(mu.as_array() if isinstance(mu, UnitVector3) else mu)
    k = float(_check_kappa(kappa))
    return k * float(f @ mu) - math.log(2.0 * math.pi) - float(log_z_unchecked(k))


def vmf_density(f, mu, kappa) -> float:
    """vMF density ``exp(kappa mu.f) / (2 pi Z(kappa))`` on S^2."""
    k = float(_check_kappa(kappa))
    if k > LOG_DOMAIN_THRESHOLD:
        return math.exp(log_vmf_density(f, mu, k))
    f = _as_vec3(f.as_array() if isinstance(f, UnitVector3) else f)
    mu = _as_vec3(mu.as_array() if isinstance(mu, UnitVector3) else mu)
    return math.exp(k * float(f @ mu)) / (2.0 * math.pi * float(z_eval(k)))


def vmf_density_cos(cos_angle, kappa):
    """Vectorized vMF density as a function of the cosine to the mean direction."""
    k = float(_check_kappa(kappa))
    c = np.asarray(cos_angle, dtype=float)
    return np.exp(k * c - math.log(2.0 * math.pi) - log_z_unchecked(k))


def normal_cdf(x):
    """Standard normal CDF (``scipy.special.ndtr``, erfc based, < 1e-15 absolute error)."""
    return ndtr(x)


def pn_density_cos(cos_angle, rho):
    """Isotropic projected-normal density given ``cos`` of the angle to the mean and ``rho = |mu|/sigma``."""
    c = np.asarray(cos_angle, dtype=float)
    alpha = rho * c
    # e^{-rho^2/2} * Phi(alpha) * e^{alpha^2/2} folded into one exponent so large rho does not overflow
    tail = np.exp(0.5 * (alpha * alpha - rho * rho)) * ndtr(alpha) * (1.0 + alpha * alpha)
    head = math.exp(-0.5 * rho * rho) * alpha / math.sqrt(2.0 * math.pi)
    return (head + tail) / (2.0 * math.pi)


def pn_density(f, mu, sigma2) -> float:
    """Density of ``p/|p|`` on S^2 for ``p ~ N(mu, sigma2 I)``."""
    if not (sigma2 > 0 and np.isfinite(sigma2)):
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    f = _as_vec3(f.as_array() if isinstance(f, UnitVector3) else f)
    mu = _as_vec3(mu)
    norm_mu = float(np.linalg.norm(mu))
    if norm_mu == 0.0:
        return 1.0 / (4.0 * math.pi)
    rho = norm_mu / math.sqrt(sigma2)
    return float(pn_density_cos(float(f @ mu) / norm_mu, rho))


def qpn_from_gaussian(g: IsotropicGaussian, t=(0.0, 0.0, 0.0)) -> VmfComponent:
    """vMF approximation of the projection of ``g`` onto the sphere centred at ``t``."""
    a = g.mean_array - _as_vec3(t)
    d = float(np.linalg.norm(a))
    if d == 0.0:
        raise DegenerateProjectionError("Gaussian mean coincides with the projection centre")
    return VmfComponent(UnitVector3.from_array(a), d * d / g.variance + 1.0, g.weight)


def qpn_pn_mae(rho: float, n_grid: int = 1801) -> float:
    """Mean absolute difference between qPN and PN over a uniform angle grid on [0, pi]."""
    if not rho > 0:
        raise DomainError("rho must be positive")
    if n_grid < 181:
        raise ValueError("n_grid must be at least 181")
    c = np.cos(np.linspace(0.0, math.pi, int(n_grid)))
    return float(np.mean(np.abs(vmf_density_cos(c, rho * rho + 1.0) - pn_density_cos(c, rho))))


def sphere_grid(n_nodes: int):
    """Latitude-longitude product rule with at least ``n_nodes`` nodes.

    Gauss-Legendre nodes in ``cos(theta)`` (which carries the ``sin(theta)``
    area element) times a uniform periodic grid in ``phi``. Returns
    ``(directions, weights)``; the weights sum to 4 pi.
    """
    n_theta = int(math.ceil(math.sqrt(n_nodes / 2.0)))
    n_phi = 2 * n_theta
    z, wz = np.polynomial.legendre.leggauss(n_theta)
    ph = (np.arange(n_phi) + 0.5) * (2.0 * math.pi / n_phi)
    st = np.sqrt(1.0 - z * z)
    dirs = np.empty((n_theta, n_phi, 3))
    dirs[..., 0] = st[:, None] * np.cos(ph)[None, :]
    dirs[..., 1] = st[:, None] * np.sin(ph)[None, :]
    dirs[..., 2] = z[:, None]
    w = np.broadcast_to((wz * (2.0 * math.pi / n_phi))[:, None], (n_theta, n_phi))
    return dirs.reshape(-1, 3), np.ascontiguousarray(w).reshape(-1)
