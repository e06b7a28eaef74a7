import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from cbmm.baselines import GmmModel, gmm_density, gmm_to_cbmm
from cbmm.copulas import CopulaSpec
from cbmm.exceptions import ParameterDomainError, UndefinedPosteriorError
from cbmm.marginals import MarginalSpec, marginal_cdf, marginal_quantile
from cbmm.metrics import kolmogorov_distance_2d
from cbmm.mixture import (
    Cbmm,
    Component,
    component_cdf,
    component_density,
    log_likelihood,
    map_labels,
    mixture_cdf,
    mixture_density,
    mixture_logdensity,
    normalized,
    posterior,
    simulate,
)

STD = (MarginalSpec("Gaussian"), MarginalSpec("Gaussian"))


def test_validation():
    with pytest.raises(ParameterDomainError):
        Component(0.0, STD, CopulaSpec("Product"))
    with pytest.raises(ParameterDomainError):
        Component(0.5, STD[:1], CopulaSpec("Product"))
    with pytest.raises(ParameterDomainError):
        Cbmm((Component(0.5, STD, CopulaSpec("Product")),))
    with pytest.raises(ParameterDomainError):
        Cbmm(())
    m = normalized([Component(0.2, STD, CopulaSpec("Product")), Component(0.6, STD, CopulaSpec("FGM", 0.5))])
    np.testing.assert_allclose(m.weights, [0.25, 0.75])


def test_parameter_count_of_nongaussian_model(nongaussian_model):
    assert nongaussian_model.n_params == 14


def test_json_round_trip(nongaussian_model):
    text = nongaussian_model.to_json()
    doc = json.loads(text)
    assert set(doc) == {"components"}
    assert set(doc["components"][0]) == {"weight", "marginals", "copula"}
    assert Cbmm.from_json(text) == nongaussian_model


def test_component_density_examples():
    comp = Component(1.0, STD, CopulaSpec("Product"))
    assert component_density(comp, [0.0, 0.0]) == pytest.approx(1 / (2 * math.pi), rel=1e-14)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(30, 2))
    fgm0 = Component(1.0, STD, CopulaSpec("FGM", 0.0))
    np.testing.assert_allclose(component_density(fgm0, x), component_density(comp, x), rtol=1e-14)


def test_cluster1_density_against_scipy(nongaussian_model):
    comp = nongaussian_model.components[0]
    t, fisk = stats.t(2, 2, 0.7), stats.fisk(4, 0, 3)
    u, v = t.cdf(2.0), fisk.cdf(3.0)
    expected = (1 + 1.0 * (1 - 2 * u) * (1 - 2 * v)) * t.pdf(2.0) * fisk.pdf(3.0)
    assert component_density(comp, [2.0, 3.0]) == pytest.approx(expected, rel=1e-10)
    # the same number by differentiating the component CDF numerically
    h = 1e-4
    c = lambda a, b: component_cdf(comp, [a, b])
    fd = (c(2 + h, 3 + h) - c(2 + h, 3 - h) - c(2 - h, 3 + h) + c(2 - h, 3 - h)) / (4 * h * h)
    assert fd == pytest.approx(expected, rel=1e-5)


def test_zero_outside_support(nongaussian_model):
    # Fisk needs x2 > 0 and Gamma(loc=-4) needs x2 > -4: below both, the mixture density is 0
    assert mixture_density(nongaussian_model, [2.0, -5.0]) == 0.0
    assert mixture_cdf(nongaussian_model, [-1e6, -5.0]) == 0.0
    # between the supports only cluster 2 contributes
    assert posterior(nongaussian_model, [3.5, -1.0])[1] == 1.0
    with pytest.raises(UndefinedPosteriorError) as err:
        posterior(nongaussian_model, np.array([[0.0, 1.0], [2.0, -5.0]]))
    assert err.value.index == 1
    assert log_likelihood(nongaussian_model, [[2.0, -5.0]]) == -math.inf


def test_mixture_examples(nongaussian_model):
    comp = nongaussian_model.components[1]
    single = Cbmm((Component(1.0, comp.marginals, comp.copula),))
    twin = Cbmm((Component(0.4, comp.marginals, comp.copula), Component(0.6, comp.marginals, comp.copula)))
    x = simulate(single, 50, 1)[0]
    np.testing.assert_allclose(mixture_density(single, x), component_density(comp, x), rtol=1e-14)
    np.testing.assert_allclose(mixture_density(twin, x), component_density(comp, x), rtol=1e-12)
    np.testing.assert_allclose(posterior(twin, x), np.tile([0.4, 0.6], (50, 1)), atol=1e-12)
    half = Cbmm((Component(0.5, comp.marginals, comp.copula), Component(0.5, comp.marginals, comp.copula)))
    np.testing.assert_allclose(posterior(half, x), 0.5, atol=1e-12)


def test_posterior_at_cluster2_mode(nongaussian_model):
    # Laplace mode 3.5 and the Gamma mode -4 + 9 * 0.5 = 0.5
    assert posterior(nongaussian_model, [3.5, 0.5])[1] > 0.999


def test_posterior_sums_to_one(nongaussian_model):
    x, _ = simulate(nongaussian_model, 500, 2)
    p = posterior(nongaussian_model, x)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(map_labels(nongaussian_model, x), np.argmax(p, axis=1))


def _envelope(model, eps=1e-5):
    lo = [min(marginal_quantile(c.marginals[d], eps) for c in model.components) for d in range(2)]
    hi = [max(marginal_quantile(c.marginals[d], 1 - eps) for c in model.components) for d in range(2)]
    return lo, hi


def test_density_integrates_to_one(nongaussian_model):
    m = nongaussian_model
    # the Student t(2) tails are too heavy for a fixed box, so integrate each
    # component separately over its own quantile box and add the lost tail mass
    total = 0.0
    for c in m.components:
        eps = 1e-7
        (a1, b1), (a2, b2) = [(marginal_quantile(mm, eps), marginal_quantile(mm, 1 - eps)) for mm in c.marginals]
        box_mass = component_cdf(c, [b1, b2]) - component_cdf(c, [a1, b2]) - component_cdf(c, [b1, a2]) + component_cdf(c, [a1, a2])
        val, _ = integrate.dblquad(lambda y, x: component_density(c, [x, y]), a1, b1, a2, b2, epsabs=1e-6, epsrel=1e-6)
        assert val == pytest.approx(box_mass, abs=1e-3)
        total += c.weight * (val + (1.0 - box_mass))
    assert total == pytest.approx(1.0, abs=1e-3)


def test_gaussian_mixture_integrates_to_one(gaussian_model):
    (l1, l2), (h1, h2) = _envelope(gaussian_model, 1e-9)
    val, _ = integrate.dblquad(lambda y, x: mixture_density(gaussian_model, [x, y]), l1, h1, l2, h2, epsabs=1e-8)
    assert val == pytest.approx(1.0, abs=1e-3)


def test_cdf_limits_and_monotonicity(nongaussian_model):
    m = nongaussian_model
    assert mixture_cdf(m, [1e12, 1e12]) == pytest.approx(1.0, abs=1e-9)
    g = np.linspace(-5, 15, 30)
    for fixed in (0.0, 2.0, 6.0):
        row = mixture_cdf(m, np.column_stack([g, np.full_like(g, fixed)]))
        col = mixture_cdf(m, np.column_stack([np.full_like(g, fixed), g]))
        assert np.all(np.diff(row) >= -1e-15) and np.all(np.diff(col) >= -1e-15)


def test_cdf_against_monte_carlo(nongaussian_model):
    x, _ = simulate(nongaussian_model, 1_000_000, np.random.default_rng(17))
    q = np.array([[2.0, 1.0], [3.5, 0.5], [1.0, 3.0], [4.0, 4.0], [6.0, 8.0]])
    emp = [np.mean((x[:, 0] <= a) & (x[:, 1] <= b)) for a, b in q]
    np.testing.assert_allclose(emp, mixture_cdf(nongaussian_model, q), atol=0.005)


def test_simulation_properties(nongaussian_model):
    x, z = simulate(nongaussian_model, 100_000, np.random.default_rng(3))
    assert set(np.unique(z)) == {0, 1}
    assert abs(np.mean(z == 0) - 0.4) < 0.01
    for k, comp in enumerate(nongaussian_model.components):
        for d in range(2):
            ks = stats.kstest(x[z == k, d], lambda y: marginal_cdf(comp.marginals[d], y)).statistic
            assert ks < 0.01
    assert kolmogorov_distance_2d(x, lambda p: mixture_cdf(nongaussian_model, p)) < 0.01
    x2, z2 = simulate(nongaussian_model, 100, np.random.default_rng(3))
    np.testing.assert_array_equal(x2, simulate(nongaussian_model, 100, np.random.default_rng(3))[0])
    single = Cbmm((Component(1.0, STD, CopulaSpec("Gaussian", 0.5)),))
    assert np.all(simulate(single, 20, 0)[1] == 0)


def test_log_likelihood(nongaussian_model):
    x, _ = simulate(nongaussian_model, 100, np.random.default_rng(4))
    ref = sum(math.log(sum(c.weight * component_density(c, p) for c in nongaussian_model.components)) for p in x)
    assert log_likelihood(nongaussian_model, x) == pytest.approx(ref, abs=1e-9)
    both = log_likelihood(nongaussian_model, np.vstack([x, x[:40]]))
    assert both == pytest.approx(log_likelihood(nongaussian_model, x) + log_likelihood(nongaussian_model, x[:40]))
    # a uniform-density single point: Beta(1,1) marginals and the product copula
    flat = Cbmm((Component(1.0, (MarginalSpec("Beta", 1, 1), MarginalSpec("Beta", 1, 1)), CopulaSpec("Product")),))
    assert log_likelihood(flat, [[0.3, 0.6]]) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    st.floats(0.05, 0.95),
    st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.3, 3), st.floats(0.3, 3), st.floats(-0.95, 0.95)),
             min_size=2, max_size=2),
)
def test_gmm_bridge(w, comps):
    means = np.array([[c[0], c[1]] for c in comps])
    covs = np.array([[[c[2] ** 2, c[4] * c[2] * c[3]], [c[4] * c[2] * c[3], c[3] ** 2]] for c in comps])
    gmm = GmmModel(np.array([w, 1 - w]), means, covs)
    cbmm = gmm_to_cbmm(gmm)
    x = np.random.default_rng(0).normal(scale=2.0, size=(40, 2))
    np.testing.assert_allclose(mixture_density(cbmm, x), gmm_density(gmm, x), rtol=1e-8)


def test_scalar_and_batch_agree(nongaussian_model):
    x, _ = simulate(nongaussian_model, 5, 9)
    batch = mixture_logdensity(nongaussian_model, x)
    assert [mixture_logdensity(nongaussian_model, p) for p in x] == pytest.approx(list(batch), rel=1e-14)
    with pytest.raises(ValueError):
        mixture_density(nongaussian_model, np.zeros((3, 3)))
