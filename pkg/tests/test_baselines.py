import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cbmm.baselines import (
    GmmModel,
    bic,
    bic_value,
    gmm_density,
    gmm_em_fit,
    gmm_log_likelihood,
    gmm_predict,
    gmm_to_cbmm,
    kmeans,
    select_k_bic,
)
from cbmm.exceptions import InsufficientDataError, ParameterDomainError
from cbmm.metrics import error_ratio
from cbmm.mixture import Cbmm, Component, mixture_density, simulate


def blobs(centers, n_per, scale, seed):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(c, scale, size=(n_per, 2)) for c in centers])
    z = np.repeat(np.arange(len(centers)), n_per)
    return x, z


def test_gmm_model_validation():
    with pytest.raises(ParameterDomainError):
        GmmModel([0.5, 0.6], np.zeros((2, 2)), np.array([np.eye(2)] * 2))
    with pytest.raises(np.linalg.LinAlgError):
        GmmModel([1.0], np.zeros((1, 2)), np.array([[[1.0, 2.0], [2.0, 1.0]]]))
    with pytest.raises(ParameterDomainError):
        GmmModel([1.0], np.zeros((1, 2)), np.array([[[1.0, 0.2], [0.1, 1.0]]]))


def test_gmm_json_round_trip():
    m = GmmModel([0.3, 0.7], [[0, 1], [2, 3]], [np.eye(2), [[2.0, 0.5], [0.5, 1.0]]])
    doc = json.loads(m.to_json())
    assert set(doc["components"][0]) == {"weight", "mean", "cov"}
    back = GmmModel.from_dict(doc)
    np.testing.assert_array_equal(back.covs, m.covs)
    assert m.n_params == 11


def test_gmm_density_against_scipy():
    from scipy import stats

    m = GmmModel([0.3, 0.7], [[0, 1], [2, 3]], [np.eye(2), [[2.0, 0.5], [0.5, 1.0]]])
    x = np.random.default_rng(0).normal(size=(20, 2)) * 2
    ref = 0.3 * stats.multivariate_normal(m.means[0], m.covs[0]).pdf(x) + 0.7 * stats.multivariate_normal(
        m.means[1], m.covs[1]).pdf(x)
    np.testing.assert_allclose(gmm_density(m, x), ref, rtol=1e-12)


def test_kmeans_examples():
    x, z = blobs([(0, 0), (10, 10)], 100, 0.5, 1)
    res = kmeans(x, 2, seed=0)
    assert error_ratio(res.labels, z) == 0.0
    one = kmeans(x, 1, seed=0)
    np.testing.assert_allclose(one.centroids[0], x.mean(axis=0))
    again = kmeans(x, 2, seed=0)
    np.testing.assert_array_equal(res.labels, again.labels)
    with pytest.raises(InsufficientDataError):
        kmeans(x[:2], 3)


def test_kmeans_objective_non_increasing():
    x, _ = blobs([(0, 0), (3, 0), (1.5, 2.5), (5, 5)], 150, 1.2, 2)
    res = kmeans(x, 4, seed=3)
    assert np.all(np.diff(res.inertia_trace) <= 1e-9)


def test_kmeans_empty_cluster_reseeded():
    # duplicated points leave k-means++ no choice but to start two centres together
    x = np.vstack([np.zeros((10, 2)), np.ones((1, 2)) * 5])
    res = kmeans(x, 3, seed=0)
    assert set(res.labels) == {0, 1, 2}


def test_em_k1_is_sample_moments():
    x, _ = blobs([(1, -2)], 500, 1.5, 4)
    m, trace = gmm_em_fit(x, 1, seed=0)
    np.testing.assert_allclose(m.means[0], x.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(m.covs[0], np.cov(x.T, bias=True), atol=1e-12)


def test_em_recovers_gaussian_scenario(gaussian_model):
    x, _ = simulate(gaussian_model, 2000, np.random.default_rng(0))
    m, trace = gmm_em_fit(x, 2, seed=0)
    order = np.argsort(m.means[:, 0])
    np.testing.assert_allclose(m.weights[order], [0.4, 0.6], atol=0.03)
    np.testing.assert_allclose(m.means[order], [[0.0, 2.0], [3.5, 2.5]], atol=0.1)


@pytest.mark.parametrize("seed", range(5))
def test_em_monotone(seed, nongaussian_model):
    x, _ = simulate(nongaussian_model, 800, np.random.default_rng(seed))
    _, trace = gmm_em_fit(x, 3, seed=seed, tol=0)
    assert np.all(np.diff(trace) >= -1e-8)


def test_em_ridge_on_singular_cluster():
    rng = np.random.default_rng(5)
    line = np.column_stack([np.linspace(0, 1, 50), np.linspace(0, 1, 50)]) + 20.0
    x = np.vstack([rng.normal(size=(200, 2)), line])
    m, _ = gmm_em_fit(x, 2, seed=0, iter_max=20)
    assert m.regularized
    for c in m.covs:
        np.linalg.cholesky(c)
    with pytest.raises(InsufficientDataError):
        gmm_em_fit(x[:5], 2)


def test_bic_examples(nongaussian_model):
    assert bic_value(0.0, 1, math.e) == pytest.approx(1.0)
    x, _ = simulate(nongaussian_model, 300, np.random.default_rng(1))
    assert nongaussian_model.n_params == 14
    assert bic(nongaussian_model, x) == pytest.approx(
        -2 * sum(np.log(mixture_density(nongaussian_model, x))) + 14 * math.log(300), rel=1e-12)
    m, _ = gmm_em_fit(x, 1, seed=0)
    dup = GmmModel([0.5, 0.5], np.repeat(m.means, 2, axis=0), np.repeat(m.covs, 2, axis=0))
    assert gmm_log_likelihood(dup, x) == pytest.approx(gmm_log_likelihood(m, x))
    assert bic(dup, x) > bic(m, x)


def test_select_k_bic():
    one, _ = blobs([(0, 0)], 300, 1.0, 6)
    assert select_k_bic(one, [1, 2, 3], runs=3, seed=0) == 1
    three, _ = blobs([(0, 0), (12, 0), (6, 10)], 150, 1.0, 7)
    assert select_k_bic(three, [1, 2, 3, 4], runs=3, seed=0) == 3
    with pytest.raises(ValueError):
        select_k_bic(three, [1, 2], runs=0)


def test_select_k_bic_single_run_is_argmin():
    x, _ = blobs([(0, 0), (4, 0)], 120, 1.0, 8)
    k = select_k_bic(x, [1, 2, 3], runs=1, seed=11)
    ss = np.random.SeedSequence(11).spawn(1)[0]
    scores = {kk: bic(gmm_em_fit(x, kk, seed=np.random.default_rng(ss.spawn(1)[0]))[0], x) for kk in (1, 2, 3)}
    assert k == min(scores, key=scores.get)


def test_predict_agrees_with_cbmm(gaussian_model):
    x, _ = simulate(gaussian_model, 400, np.random.default_rng(2))
    m, _ = gmm_em_fit(x, 2, seed=1)
    from cbmm.mixture import map_labels

    np.testing.assert_array_equal(gmm_predict(m, x), map_labels(gmm_to_cbmm(m), x))


def test_bridge_at_100_random_points():
    rng = np.random.default_rng(9)
    m = GmmModel([0.25, 0.35, 0.4], rng.normal(size=(3, 2)) * 3,
                 [[[1.0, 0.8], [0.8, 2.0]], [[0.5, -0.3], [-0.3, 0.4]], [[3.0, 0.0], [0.0, 0.2]]])
    x = rng.normal(size=(100, 2)) * 3
    np.testing.assert_allclose(mixture_density(gmm_to_cbmm(m), x), gmm_density(m, x), rtol=1e-8)
