import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from spherepose.sphere_stats import (DegenerateProjectionError, DomainError, IsotropicGaussian, UnitVector3,
                                     VmfComponent, log_z_eval, normal_cdf, pn_density, qpn_from_gaussian,
                                     qpn_pn_mae, sphere_grid, vmf_density, z_eval)

mpmath.mp.dps = 40


def z_oracle(k):
    k = mpmath.mpf(k)
    return (mpmath.exp(k) - mpmath.exp(-k)) / k


def pn_oracle(f, mu, sigma2):
    """Radial integral of the Gaussian along the ray through f: int_0^inf r^2 N(r f; mu, s2 I) dr."""
    f = np.asarray(f, float)
    mu = np.asarray(mu, float)
    c = (2 * math.pi * sigma2) ** -1.5

    def integrand(r):
        d = r * f - mu
        return r * r * c * math.exp(-0.5 * float(d @ d) / sigma2)

    peak = max(0.0, float(f @ mu))
    hi = peak + 40 * math.sqrt(sigma2)
    return quad(integrand, 0.0, hi, points=[peak], limit=400, epsabs=1e-14, epsrel=1e-12)[0]


# ---------------------------------------------------------------- UnitVector3

def test_unit_vector_normalizes():
    u = UnitVector3(3.0, 0.0, 4.0)
    assert np.allclose(u.as_array(), [0.6, 0.0, 0.8])


@pytest.mark.parametrize("v", [(0, 0, 0), (math.nan, 0, 1), (math.inf, 0, 0)])
def test_unit_vector_rejects_zero_and_nonfinite(v):
    with pytest.raises(ValueError):
        UnitVector3(*v)


def test_unit_vector_strict_tolerance():
    UnitVector3.from_array([0, 0, 1 + 5e-7], strict=True)
    with pytest.raises(ValueError):
        UnitVector3.from_array([0, 0, 1 + 5e-6], strict=True)


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-6))
def test_unit_vector_norm_property(v):
    assert abs(np.linalg.norm(UnitVector3.from_array(v).as_array()) - 1.0) < 1e-9


def test_component_validation():
    with pytest.raises(DomainError):
        VmfComponent(UnitVector3(0, 0, 1), 0.0)
    with pytest.raises(DomainError):
        VmfComponent(UnitVector3(0, 0, 1), 1.0, -0.1)
    with pytest.raises(DomainError):
        IsotropicGaussian((0, 0, 0), 0.0)
    with pytest.raises(DomainError):
        IsotropicGaussian((0, 0, 0), 1.0, -1.0)


# ---------------------------------------------------------------- Z

def test_z_small_kappa_limit():
    assert z_eval(1e-12) == pytest.approx(2.0, abs=1e-12)


def test_z_at_one():
    assert z_eval(1.0) == pytest.approx(2.3504024, abs=5e-8)
    assert z_eval(1.0) == pytest.approx(float(z_oracle(1.0)), rel=1e-14)


def test_log_z_large():
    assert log_z_eval(800.0) == pytest.approx(793.31539, abs=5e-6)
    assert log_z_eval(800.0) == pytest.approx(float(mpmath.log(z_oracle(800))), rel=1e-14)


@pytest.mark.parametrize("k", [1e-4, 0.3, 2.0, 29.9, 30.1, 100.0, 700.0])
def test_z_matches_high_precision(k):
    assert z_eval(k) == pytest.approx(float(z_oracle(k)), rel=1e-13)
    assert log_z_eval(k) == pytest.approx(float(mpmath.log(z_oracle(k))), rel=1e-13, abs=1e-14)


@pytest.mark.parametrize("k", [0.0, -1.0, math.nan, math.inf])
def test_z_domain_errors(k):
    with pytest.raises(DomainError):
        z_eval(k)
    with pytest.raises(DomainError):
        log_z_eval(k)


def test_z_strictly_increasing():
    k = np.linspace(1e-3, 1000.0, 10_000)
    lz = log_z_eval(k)
    assert np.all(np.diff(lz) > 0)
    z = z_eval(k[k <= 700])
    assert np.all(np.diff(z) > 0)


def test_log_linear_consistency():
    k = np.linspace(1.0, 30.0, 2000)
    assert np.max(np.abs(np.log(z_eval(k)) - log_z_eval(k))) < 1e-10


# ---------------------------------------------------------------- vMF

def test_vmf_uniform_limit():
    f = UnitVector3(1, 2, 3)
    assert vmf_density(f, UnitVector3(0, 0, 1), 1e-10) == pytest.approx(1 / (4 * math.pi), rel=1e-8)


# e / (2 pi Z(1)) and e^2 / (2 pi Z(2)), evaluated at 40 digits
@pytest.mark.parametrize("k,expected", [(1.0, 0.1840654996), (2.0, 0.3242487084)])
def test_vmf_at_mode(k, expected):
    mu = UnitVector3(0, 0, 1)
    oracle = float(mpmath.exp(k) / (2 * mpmath.pi * z_oracle(k)))
    assert oracle == pytest.approx(expected, abs=1e-10)
    assert vmf_density(mu, mu, k) == pytest.approx(oracle, rel=1e-13)


def test_vmf_large_kappa_log_domain():
    mu = UnitVector3(0, 0, 1)
    # at the mode the density is kappa / (2 pi (1 - e^{-2 kappa}))
    assert vmf_density(mu, mu, 5000.0) == pytest.approx(5000.0 / (2 * math.pi), rel=1e-12)


@pytest.mark.parametrize("k", [0.01, 1.0, 10.0, 100.0])
def test_vmf_normalization(k):
    dirs, w = sphere_grid(2_000_000)
    mu = np.array([0.3, -0.2, 0.9])
    mu /= np.linalg.norm(mu)
    from spherepose.sphere_stats import vmf_density_cos
    total = float(np.sum(w * vmf_density_cos(dirs @ mu, k)))
    assert total == pytest.approx(1.0, abs=1e-6)


# ---------------------------------------------------------------- normal CDF and PN

def test_normal_cdf_values():
    assert normal_cdf(0.0) == 0.5
    assert normal_cdf(1.96) == pytest.approx(0.9750021, abs=5e-8)
    v = normal_cdf(-8.0)
    assert 0.0 <= v <= 1e-14
    assert v == pytest.approx(6.22e-16, rel=1e-2)


@given(st.floats(-30, 30))
def test_normal_cdf_matches_high_precision(x):
    assert abs(normal_cdf(x) - float(mpmath.ncdf(x))) < 1e-12


def test_pn_uniform_at_zero_mean(rng):
    f = rng.normal(size=(1000, 3))
    vals = [pn_density(v / np.linalg.norm(v), np.zeros(3), rng.uniform(0.1, 5)) for v in f]
    assert np.max(np.abs(np.array(vals) - 1 / (4 * math.pi))) < 1e-12


def test_pn_rho_one_at_mode():
    mu = np.array([0.0, 0.0, 1.0])
    assert pn_density(mu, mu, 1.0) == pytest.approx(0.30632, abs=5e-6)


@pytest.mark.parametrize("mu,s2", [((0, 0, 1), 1.0), ((1, 2, 0.5), 0.3), ((0, 3, 0), 4.0), ((5, 0, 0), 0.2)])
def test_pn_matches_radial_integral(rng, mu, s2):
    for f in rng.normal(size=(10, 3)):
        f /= np.linalg.norm(f)
        assert pn_density(f, mu, s2) == pytest.approx(pn_oracle(f, mu, s2), rel=1e-8, abs=1e-13)


@pytest.mark.parametrize("mu,s2", [((0, 0, 1), 1.0), ((1, 2, 0.5), 0.3), ((0, 0.2, 0), 4.0)])
def test_pn_normalization(mu, s2):
    dirs, w = sphere_grid(2_000_000)
    mu = np.asarray(mu, float)
    rho = np.linalg.norm(mu) / math.sqrt(s2)
    from spherepose.sphere_stats import pn_density_cos
    total = float(np.sum(w * pn_density_cos(dirs @ (mu / np.linalg.norm(mu)), rho)))
    assert total == pytest.approx(1.0, abs=1e-6)


def test_pn_domain_error():
    with pytest.raises(DomainError):
        pn_density((0, 0, 1), (0, 0, 1), 0.0)


# ---------------------------------------------------------------- qPN

@pytest.mark.parametrize("mean,var,t,direction,kappa", [
    ((0, 0, 2), 1.0, (0, 0, 0), (0, 0, 1), 5.0),
    ((0, 0, 2), 1.0, (0, 0, 1), (0, 0, 1), 2.0),
    ((3, 4, 0), 4.0, (0, 0, 0), (0.6, 0.8, 0), 7.25),
])
def test_qpn_mapping(mean, var, t, direction, kappa):
    c = qpn_from_gaussian(IsotropicGaussian(mean, var, 0.4), t)
    assert np.allclose(c.mean_direction.as_array(), direction)
    assert c.concentration == pytest.approx(kappa)
    assert c.weight == 0.4


def test_qpn_degenerate():
    with pytest.raises(DegenerateProjectionError):
        qpn_from_gaussian(IsotropicGaussian((1, 1, 1), 1.0), (1, 1, 1))


def test_qpn_mae_plotted_values():
    assert qpn_pn_mae(1.0) == pytest.approx(0.00845, rel=0.3)
    assert qpn_pn_mae(5.0) == pytest.approx(0.00326, rel=0.3)
    assert qpn_pn_mae(100.0) < 1e-3


def test_qpn_mae_fidelity_and_monotone():
    rho = np.arange(1.0, 10.0 + 1e-9, 0.5)
    mae = np.array([qpn_pn_mae(r, 1801) for r in rho])
    assert np.all(mae < 0.01)
    # non-increasing up to a 5% ripple
    running_min = np.minimum.accumulate(mae)
    assert np.all(mae <= running_min * 1.05)


def test_qpn_mae_argument_checks():
    with pytest.raises(DomainError):
        qpn_pn_mae(0.0)
    with pytest.raises(ValueError):
        qpn_pn_mae(1.0, 100)
