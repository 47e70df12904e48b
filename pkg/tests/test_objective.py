import math
from dataclasses import replace

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from spherepose.mixtures import Gmm, SemanticClass, SemanticMixturePair, Vmfmm
from spherepose.objective import (InfeasiblePoseError, ObjectiveContext, class_values, kappa_of_t, l2_quadrature,
                                  langevin, objective_gradient, objective_value, objective_values,
                                  pair_concentration_cross, pair_concentration_self, value_and_gradient)
from spherepose.se3 import Pose, rodrigues, rotation_log
from spherepose.sphere_stats import DegenerateProjectionError, IsotropicGaussian, UnitVector3, VmfComponent

from conftest import feasible_translation, random_context, random_unit


def mp_z(x):
    x = mp.mpf(x)
    return 2 * mp.sinh(x) / x


def test_kappa_of_t():
    g = IsotropicGaussian((0.0, 0.0, 2.0), 1.0, 1.0)
    assert kappa_of_t(g, (0, 0, 0)) == 5.0
    assert kappa_of_t(IsotropicGaussian((3.0, 4.0, 0.0), 0.25, 1.0), (0, 0, 0)) == 101.0
    with pytest.raises(DegenerateProjectionError):
        kappa_of_t(g, (0, 0, 2))


def test_pair_concentrations():
    g = Gmm((IsotropicGaussian((0, 0, 2.0), 1.0, 0.5), IsotropicGaussian((0, 0, -2.0), 1.0, 0.5)))
    assert pair_concentration_self(g, 0, 0, (0, 0, 0)) == 10.0
    assert pair_concentration_self(g, 0, 1, (0, 0, 0)) == 0.0
    v = Vmfmm((VmfComponent(UnitVector3(1.0, 0.0, 0.0), 3.0, 1.0),))
    assert pair_concentration_cross(g, v, 0, 0, np.eye(3), (0, 0, 0)) == pytest.approx(math.hypot(5, 3))


def test_toy_value(toy_context):
    # one projected component meeting an identical vMF: f = -Z(10) / Z(5)^2
    expect = float(-mp_z(10) / mp_z(5) ** 2)
    assert objective_value(toy_context, Pose((0, 0, 0), (0, 0, 0))) == pytest.approx(expect, rel=1e-13)
    assert expect == pytest.approx(-2.5002, abs=1e-4)


def test_antipodal_pair_self_term():
    # two projected components in opposite directions: K = 0 and Z(0) = 2
    g = Gmm((IsotropicGaussian((0, 0, 2.0), 1.0, 0.5), IsotropicGaussian((0, 0, -2.0), 1.0, 0.5)))
    v = Vmfmm((VmfComponent(UnitVector3(0.0, 0.0, 1.0), 5.0, 1.0),))
    ctx = ObjectiveContext.from_mixtures(g, v)
    z5, z10 = mp_z(5), mp_z(10)
    self_t = 0.25 * (2 * z10 / z5 ** 2 + 2 * 2 / z5 ** 2)
    cross = 0.5 * z10 / z5 ** 2 + 0.5 * 2 / z5 ** 2
    assert objective_value(ctx, Pose((0, 0, 0), (0, 0, 0))) == pytest.approx(float(self_t - 2 * cross), rel=1e-12)


def test_infeasible_pose(toy_context):
    with pytest.raises(InfeasiblePoseError):
        objective_value(toy_context, Pose((0, 0, 0), (0, 0, 1.6)))
    assert math.isfinite(objective_value(toy_context, Pose((0, 0, 0), (0, 0, 1.6)), check_zeta=False))
    assert objective_values(toy_context, [[0, 0, 0]], [[0, 0, 1.6]])[0] == math.inf


def test_batch_matches_scalar(rng):
    ctx = random_context(rng, 5, 4)
    rs = rng.uniform(-2, 2, (50, 3))
    ts = np.array([feasible_translation(rng, ctx) for _ in range(50)])
    batch = objective_values(ctx, rs, ts, chunk_elems=100)
    for k in range(50):
        assert batch[k] == pytest.approx(objective_value(ctx, (rs[k], ts[k])), rel=1e-12, abs=1e-14)


def test_semantic_decomposition(rng):
    a, b = random_context(rng, 3, 2), random_context(rng, 2, 4)
    ca, cb = a.classes[0], b.classes[0]
    ctx = ObjectiveContext((replace(ca, weight=0.3), replace(cb, weight=0.7)))
    pose = (rng.uniform(-1, 1, 3), feasible_translation(rng, ctx))
    va, vb = class_values(ctx, pose)
    assert va == pytest.approx(objective_value(a, pose), rel=1e-13)
    assert vb == pytest.approx(objective_value(b, pose), rel=1e-13)
    assert objective_value(ctx, pose) == pytest.approx(0.3 * va + 0.7 * vb, rel=1e-13)


def test_context_from_pair_weights(rng):
    c = random_context(rng).classes[0]
    g = Gmm(tuple(IsotropicGaussian(m, s, w) for m, s, w in zip(c.means, c.sigma2, c.phi1)))
    v = Vmfmm(tuple(VmfComponent(UnitVector3.from_array(d), k, w) for d, k, w in zip(c.dirs, c.kappa2, c.phi2)))
    pair = SemanticMixturePair((SemanticClass("a", 0.25, g, v), SemanticClass("b", 0.75, g, v)))
    ctx = ObjectiveContext.from_pair(pair)
    pose = (np.zeros(3), np.array([0, 0, 5.0]))
    assert objective_value(ctx, pose) == pytest.approx(objective_value(ObjectiveContext.from_mixtures(g, v), pose))
    with pytest.raises(ValueError):
        ObjectiveContext((c, c))


def test_gradient_matches_finite_differences(rng):
    for _ in range(20):
        ctx = random_context(rng, 4, 3, kappa=(2, 30))
        r = random_unit(rng) * rng.uniform(0.05, 2.5)
        t = feasible_translation(rng, ctx)
        v, g = value_and_gradient(ctx, r, t)
        x = np.concatenate([r, t])
        h = 1e-6
        f = lambda y: objective_value(ctx, (y[:3], y[3:]))
        fd = np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(6)])
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-7 * max(1.0, abs(v)))


def test_gradient_near_identity(rng):
    ctx = random_context(rng, 3, 3)
    t = feasible_translation(rng, ctx)
    r = np.array([1e-8, -2e-8, 0.5e-8])
    g = objective_gradient(ctx, (r, t))
    h = 1e-6
    fd = [(objective_value(ctx, (r + h * e, t)) - objective_value(ctx, (r - h * e, t))) / (2 * h) for e in np.eye(3)]
    assert np.allclose(g[:3], fd, rtol=1e-5, atol=1e-9)


def test_langevin_limits():
    assert langevin(0.0) == 0.0
    assert langevin(1e-4) == pytest.approx(1e-4 / 3, rel=1e-8)
    assert langevin(1000.0) == pytest.approx(1 - 1e-3, rel=1e-12)
    x = 2.0
    assert langevin(x) == pytest.approx(float(mp.coth(x) - 1 / mp.mpf(x)), rel=1e-14)


@given(st.integers(0, 10 ** 6))
def test_joint_rotation_equivariance(seed):
    # rotating the image by Q and composing Q with the camera rotation leaves f unchanged
    rng = np.random.default_rng(seed)
    ctx = random_context(rng, 3, 3)
    c = ctx.classes[0]
    Q = rodrigues(random_unit(rng) * rng.uniform(0, math.pi))
    rotated = ObjectiveContext((replace(c, dirs=c.dirs @ Q.T),), ctx.zeta)
    R = rodrigues(random_unit(rng) * rng.uniform(0, 3))
    t = feasible_translation(rng, ctx)
    a = objective_value(ctx, (rotation_log(R), t))
    b = objective_value(rotated, (rotation_log(Q @ R), t))
    assert b == pytest.approx(a, rel=1e-9, abs=1e-12)


@given(st.integers(0, 10 ** 6))
def test_translation_equivariance(seed):
    # shifting the model and the camera centre together leaves f unchanged
    rng = np.random.default_rng(seed)
    ctx = random_context(rng, 3, 2)
    c = ctx.classes[0]
    s = rng.normal(size=3) * 3
    shifted = ObjectiveContext((replace(c, means=c.means + s),), ctx.zeta)
    r, t = rng.uniform(-1, 1, 3), feasible_translation(rng, ctx)
    assert objective_value(shifted, (r, t + s)) == pytest.approx(objective_value(ctx, (r, t)), rel=1e-9, abs=1e-12)


@given(st.integers(0, 10 ** 6))
def test_l2_lower_bounded_by_image_constant(seed):
    # f + C2 is a squared L2 norm (times 2 pi) so it is never negative
    rng = np.random.default_rng(seed)
    ctx = random_context(rng, 3, 3)
    r, t = rng.uniform(-2, 2, 3), feasible_translation(rng, ctx)
    assert objective_value(ctx, (r, t)) + ctx.image_constant() >= -1e-9


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_quadrature_identity(seed):
    # closed form against an independent grid integral of the squared density difference
    rng = np.random.default_rng(seed)
    ctx = random_context(rng, 3, 3, sigma2=(0.3, 0.6), kappa=(2, 30), spread=0.5)
    r = rng.uniform(-1, 1, 3)
    t = random_unit(rng) * 2.5
    closed = (objective_value(ctx, (r, t)) + ctx.image_constant()) / (2 * math.pi)
    numeric = l2_quadrature(ctx, (r, t))
    assert numeric == pytest.approx(closed, rel=1e-6, abs=1e-9)


def test_perfect_alignment_gives_zero_distance(toy_context):
    pose = Pose((0, 0, 0), (0, 0, 0))
    assert objective_value(toy_context, pose) + toy_context.image_constant() == pytest.approx(0.0, abs=1e-12)


def test_quadrature_rejects_sharp_components(rng):
    ctx = random_context(rng, 2, 2, kappa=(150, 200))
    with pytest.raises(ValueError):
        l2_quadrature(ctx, (np.zeros(3), np.array([0, 0, 3.0])))
    with pytest.raises(ValueError):
        l2_quadrature(ctx, (np.zeros(3), np.array([0, 0, 3.0])), n_nodes=1000)
