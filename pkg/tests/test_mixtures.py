import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spherepose.mixtures import (KAPPA_MIN, Gmm, LabeledBearingSet, LabeledPointSet, MixtureError, MixtureSettings,
                                 SemanticMixturePair, Vmfmm, banerjee_kappa, build_semantic_mixtures,
                                 dp_means, dp_means_objective, dp_vmf_means, fit_gaussian_components,
                                 fit_vmf_components)
from spherepose.sphere_stats import IsotropicGaussian, UnitVector3, VmfComponent

from conftest import random_unit

points_strategy = st.lists(st.tuples(*[st.floats(-3, 3)] * 3), min_size=1, max_size=40).map(np.array)


def partitions(n):
    """All set partitions of range(n) as label arrays (restricted growth strings)."""
    def rec(prefix, k):
        if len(prefix) == n:
            yield np.array(prefix)
            return
        for c in range(k + 1):
            yield from rec(prefix + [c], max(k, c + 1))
    yield from rec([0], 1)


def best_partition_cost(x, lam):
    best = math.inf
    for z in partitions(len(x)):
        k = z.max() + 1
        centers = np.array([x[z == c].mean(axis=0) for c in range(k)])
        best = min(best, dp_means_objective(x, z, centers, lam))
    return best


# ---------------------------------------------------------------- dp_means

def test_dp_means_single_blob(rng):
    x = rng.normal(scale=0.05, size=(50, 3))
    assert dp_means(x, 1.0).n_clusters == 1


def test_dp_means_two_blobs_matches_brute_force(rng):
    x = np.vstack([rng.normal(scale=0.1, size=(4, 3)), rng.normal(scale=0.1, size=(4, 3)) + [5, 0, 0]])
    cl = dp_means(x, 1.0)
    assert cl.n_clusters == 2
    # DP-means objective at the result equals the exhaustive optimum over all 4140 partitions
    assert dp_means_objective(x, cl.assignments, cl.centers, 1.0) == pytest.approx(best_partition_cost(x, 1.0))


def test_dp_means_deterministic(rng):
    x = rng.uniform(-1, 1, (60, 3))
    a, b = dp_means(x, 0.25, seed=3), dp_means(x, 0.25, seed=3)
    assert np.array_equal(a.assignments, b.assignments) and np.array_equal(a.centers, b.centers)


def test_dp_means_empty():
    with pytest.raises(MixtureError):
        dp_means(np.zeros((0, 3)), 1.0)


@given(points_strategy, st.floats(0.2, 3.0))
def test_dp_means_coverage_and_monotone(x, lam):
    cl = dp_means(x, lam)
    assert cl.converged
    d = np.linalg.norm(x - cl.centers[cl.assignments], axis=1)
    assert np.all(d <= lam + 1e-9)
    h = np.array(cl.objective_history)
    assert np.all(np.diff(h) <= 1e-9 * np.maximum(1.0, np.abs(h[1:])))


@given(points_strategy, st.floats(0.2, 2.0))
def test_dp_means_parsimony_scaling(x, lam):
    assert dp_means(x, 2 * lam).n_clusters <= dp_means(x, lam).n_clusters


# ---------------------------------------------------------------- dp_vmf_means

def test_dp_vmf_identical():
    f = np.tile([0.0, 0.6, 0.8], (10, 1))
    cl = dp_vmf_means(f, math.radians(2))
    assert cl.n_clusters == 1
    assert np.allclose(cl.centers[0], [0.0, 0.6, 0.8])


def test_dp_vmf_orthogonal():
    cl = dp_vmf_means(np.array([[0, 0, 1.0], [1.0, 0, 0]]), math.radians(10))
    assert cl.n_clusters == 2


def test_dp_vmf_cone(rng):
    # 100 bearings uniform in a 1 degree cone around a random axis
    axis = random_unit(rng)
    u = np.cross(axis, [1, 0, 0]); u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    cos_t = rng.uniform(math.cos(math.radians(1)), 1.0, 100)
    phi = rng.uniform(0, 2 * math.pi, 100)
    s = np.sqrt(1 - cos_t ** 2)
    f = cos_t[:, None] * axis + s[:, None] * (np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * v)
    assert dp_vmf_means(f, math.radians(2)).n_clusters == 1


def test_dp_vmf_errors():
    with pytest.raises(MixtureError):
        dp_vmf_means(np.zeros((0, 3)), 0.1)
    with pytest.raises(MixtureError):
        dp_vmf_means(np.array([[0, 0, 1.0]]), 0.0)


@given(st.integers(0, 10_000), st.integers(1, 60), st.floats(0.02, 1.0))
def test_dp_vmf_coverage(seed, n, lam):
    f = random_unit(np.random.default_rng(seed), n)
    cl = dp_vmf_means(f, lam)
    assert cl.converged
    cos = np.sum(f * cl.centers[cl.assignments], axis=1)
    assert np.all(np.arccos(np.clip(cos, -1, 1)) <= lam + 1e-9)


# ---------------------------------------------------------------- fitting

def test_fit_gaussian_two_points():
    g = fit_gaussian_components([np.array([[0, 0, 0.0], [0, 0, 2.0]])], sigma2_min=1e-3)
    c = g.components[0]
    assert np.allclose(c.mean, [0, 0, 1])
    assert c.variance == pytest.approx(1 / 3)


def test_fit_gaussian_floor_and_weights():
    g = fit_gaussian_components([np.zeros((30, 3)) + [1, 0, 0], np.array([[0, 0, 0.0]] * 10)], sigma2_min=0.01)
    assert [c.variance for c in g.components] == [0.01, 0.01]
    assert np.allclose(g.weights, [0.75, 0.25])


def test_banerjee_value():
    assert banerjee_kappa(0.9) == pytest.approx(0.9 * (3 - 0.81) / 0.19)
    assert banerjee_kappa(0.9) == pytest.approx(10.3737, abs=5e-5)


def test_fit_vmf_cap_and_floor():
    v = fit_vmf_components([np.tile([0, 0, 1.0], (5, 1))], kappa_max=123.0)
    assert v.components[0].concentration == 123.0
    # nearly balanced pair: tiny resultant -> kappa clamped at kappa_min
    eps = 1e-9
    g = np.array([[1.0, 0, eps], [-1.0, 0, eps]])
    v = fit_vmf_components([g], kappa_min=KAPPA_MIN)
    assert v.components[0].concentration == pytest.approx(KAPPA_MIN)


def test_fit_vmf_zero_resultant():
    with pytest.raises(MixtureError):
        fit_vmf_components([np.array([[0, 0, 1.0], [0, 0, -1.0]])])


def test_fit_vmf_mean_direction_and_kappa(rng):
    f = random_unit(rng, 20) * 0.2 + [0, 0, 1]
    f /= np.linalg.norm(f, axis=1, keepdims=True)
    v = fit_vmf_components([f])
    s = f.sum(axis=0)
    assert np.allclose(v.components[0].mean_direction.as_array(), s / np.linalg.norm(s))
    assert v.components[0].concentration == pytest.approx(banerjee_kappa(np.linalg.norm(s) / 20))


@given(st.integers(0, 10_000))
def test_weight_closure(seed):
    r = np.random.default_rng(seed)
    x = r.uniform(-1, 1, (r.integers(1, 50), 3))
    f = random_unit(r, int(r.integers(1, 50)))
    s = MixtureSettings()
    pair = build_semantic_mixtures(LabeledPointSet(x), LabeledBearingSet(f), s)
    assert abs(pair.classes[0].gmm.weights.sum() - 1) < 1e-9
    assert abs(pair.classes[0].vmfmm.weights.sum() - 1) < 1e-9


def test_settings_floors():
    s = MixtureSettings(lambda_p=0.25, lambda_f=math.radians(2))
    assert s.effective_sigma2_min == pytest.approx((0.25 / 5) ** 2)
    assert s.effective_kappa_max == pytest.approx((5 / math.radians(2)) ** 2)
    assert MixtureSettings(sigma2_min=0.5, kappa_max=7.0).effective_sigma2_min == 0.5
    with pytest.raises(MixtureError):
        MixtureSettings(lambda_p=0.0)


def test_mixture_validation():
    with pytest.raises(MixtureError):
        Gmm((IsotropicGaussian((0, 0, 0), 1.0, 0.5),))
    with pytest.raises(MixtureError):
        Vmfmm(())
    with pytest.raises(MixtureError):
        LabeledPointSet(np.zeros((2, 3)), ("a",))
    with pytest.raises(MixtureError):
        LabeledBearingSet(np.zeros((1, 3)))


# ---------------------------------------------------------------- semantic pairs

def _labeled(rng, labels3, labels2):
    x = rng.uniform(-1, 1, (len(labels3), 3))
    f = random_unit(rng, len(labels2))
    return LabeledPointSet(x, tuple(labels3)), LabeledBearingSet(f, tuple(labels2))


def test_semantic_unlabeled(rng):
    pair = build_semantic_mixtures(LabeledPointSet(rng.uniform(-1, 1, (10, 3))),
                                   LabeledBearingSet(random_unit(rng, 10)))
    assert len(pair.classes) == 1 and pair.classes[0].weight == 1.0


def test_semantic_default_weights(rng):
    labs = ["a", "b", "c", "d"] * 5
    pair = build_semantic_mixtures(*_labeled(rng, labs, labs))
    assert [c.weight for c in pair.classes] == [0.25] * 4


def test_semantic_drops_one_sided_class(rng):
    pair = build_semantic_mixtures(*_labeled(rng, ["wall"] * 5 + ["chair"] * 5, ["chair"] * 6))
    assert [c.label for c in pair.classes] == ["chair"]
    assert pair.classes[0].weight == 1.0
    assert len(pair.warnings) == 1 and "wall" in pair.warnings[0]


def test_semantic_errors(rng):
    with pytest.raises(MixtureError):
        build_semantic_mixtures(*_labeled(rng, ["a"] * 3, ["b"] * 3))
    with pytest.raises(MixtureError):
        build_semantic_mixtures(LabeledPointSet(np.zeros((2, 3)), ("a", "a")), LabeledBearingSet(random_unit(rng, 2)))


def test_semantic_explicit_weights_renormalized(rng):
    pair = build_semantic_mixtures(*_labeled(rng, ["a", "b"] * 4, ["a", "b"] * 4),
                                   class_weights={"a": 3.0, "b": 1.0})
    assert [c.weight for c in pair.classes] == [0.75, 0.25]
    with pytest.raises(MixtureError):
        build_semantic_mixtures(*_labeled(rng, ["a", "b"] * 4, ["a", "b"] * 4), class_weights={"a": 1.0})


def test_semantic_pair_validation():
    g = Gmm((IsotropicGaussian((0, 0, 0), 1.0, 1.0),))
    v = Vmfmm((VmfComponent(UnitVector3(0, 0, 1), 1.0, 1.0),))
    with pytest.raises(MixtureError):
        SemanticMixturePair(())
    SemanticMixturePair.single(g, v)
