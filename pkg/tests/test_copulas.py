import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from cbmm.copulas import (
    ALL_COPULAS,
    CopulaFamily,
    CopulaSpec,
    copula_cdf,
    copula_fit_pml,
    copula_hfunc,
    copula_loglik,
    copula_logpdf,
    copula_pdf,
    copula_sample,
    pseudo_observations,
    weighted_midranks,
)
from cbmm.exceptions import DomainError, InsufficientDataError, ParameterDomainError

PARAMETRIC = [f for f in ALL_COPULAS if f is not CopulaFamily.PRODUCT]

# moderate ranges where every family is well conditioned
ALPHA_RANGE = {
    CopulaFamily.GAUSSIAN: (-0.9, 0.9),
    CopulaFamily.GUMBEL: (1.0, 6.0),
    CopulaFamily.CLAYTON: (0.0, 6.0),
    CopulaFamily.FGM: (-1.0, 1.0),
    CopulaFamily.ARCH12: (1.0, 5.0),
    CopulaFamily.ARCH14: (1.0, 5.0),
}

# a representative spec per family
SPECS = [
    CopulaSpec("Gaussian", 0.7),
    CopulaSpec("Gaussian", -0.4),
    CopulaSpec("Gumbel", 2.0),
    CopulaSpec("Clayton", 2.0),
    CopulaSpec("FGM", 1.0),
    CopulaSpec("FGM", -0.6),
    CopulaSpec("Arch12", 1.5),
    CopulaSpec("Arch14", 3.0),
    CopulaSpec("Product"),
]


def kendall_tau(spec):
    """Closed-form Kendall's tau per family."""
    f, a = spec.family, spec.alpha
    if f is CopulaFamily.GAUSSIAN:
        return 2.0 / math.pi * math.asin(a)
    if f is CopulaFamily.GUMBEL:
        return 1.0 - 1.0 / a
    if f is CopulaFamily.CLAYTON:
        return a / (a + 2.0)
    if f is CopulaFamily.FGM:
        return 2.0 * a / 9.0
    if f is CopulaFamily.ARCH12:
        return 1.0 - 2.0 / (3.0 * a)
    if f is CopulaFamily.ARCH14:
        # 1 + 4 * int_0^1 phi/phi' with phi(t) = (t^(-1/a) - 1)^a
        return (2.0 * a - 1.0) / (2.0 * a + 1.0)
    return 0.0


def random_specs(n=10, seed=3):
    rng = np.random.default_rng(seed)
    out = []
    for fam in PARAMETRIC:
        lo, hi = ALPHA_RANGE[fam]
        out += [CopulaSpec(fam, float(a)) for a in rng.uniform(lo, hi, n)]
    return out + [CopulaSpec("Product")]


def ids(specs):
    return [str(s) for s in specs]


def test_seven_families():
    assert len(CopulaFamily) == 7 and set(ALL_COPULAS) == set(CopulaFamily)
    assert CopulaFamily.parse("Gumble") is CopulaFamily.GUMBEL


@pytest.mark.parametrize(
    "fam,alpha",
    [("Gaussian", 1.0), ("Gaussian", -1.0), ("Gumbel", 0.99), ("Clayton", -0.1), ("FGM", 1.01),
     ("Arch12", 0.5), ("Arch14", 0.9), ("Product", 0.5), ("Gaussian", None), ("FGM", math.nan)],
)
def test_domain_validation(fam, alpha):
    with pytest.raises(ParameterDomainError):
        CopulaSpec(fam, alpha)


def test_boundary_values_accepted():
    for fam, a in [("Gumbel", 1.0), ("Clayton", 0.0), ("FGM", -1.0), ("FGM", 1.0), ("Arch12", 1.0), ("Arch14", 1.0)]:
        assert CopulaSpec(fam, a).alpha == a


def test_json_round_trip():
    for spec in SPECS:
        assert CopulaSpec.from_dict(spec.to_dict()) == spec


def test_cdf_examples():
    assert copula_cdf(CopulaSpec("Product"), 0.3, 0.7) == pytest.approx(0.21, abs=1e-15)
    assert copula_cdf(CopulaSpec("Gumbel", 1.0), 0.3, 0.7) == pytest.approx(0.21, abs=1e-15)
    assert copula_cdf(CopulaSpec("Clayton", 2.0), 0.5, 0.5) == pytest.approx(1 / math.sqrt(7), rel=1e-13)
    assert copula_cdf(CopulaSpec("FGM", 1.0), 0.5, 0.5) == pytest.approx(0.25 * 1.25, rel=1e-15)
    # Gaussian C(.5,.5) = 1/4 + asin(rho)/(2 pi)
    assert copula_cdf(CopulaSpec("Gaussian", 0.7), 0.5, 0.5) == pytest.approx(0.25 + math.asin(0.7) / (2 * math.pi), abs=1e-13)


def test_clayton_cdf_by_integrating_density():
    spec = CopulaSpec("Clayton", 2.0)
    val, _ = integrate.dblquad(lambda v, u: copula_pdf(spec, u, v), 0, 0.5, 0, 0.5, epsabs=1e-11, epsrel=1e-10)
    assert val == pytest.approx(1 / math.sqrt(7), rel=1e-6)


def test_gaussian_cdf_against_scipy_mvn():
    rho = 0.7
    mvn = stats.multivariate_normal([0, 0], [[1, rho], [rho, 1]])
    for u, v in [(0.1, 0.2), (0.5, 0.9), (0.95, 0.3), (0.01, 0.99)]:
        ref = mvn.cdf([stats.norm.ppf(u), stats.norm.ppf(v)])
        assert copula_cdf(CopulaSpec("Gaussian", rho), u, v) == pytest.approx(ref, abs=1e-6)


def test_pdf_examples():
    rng = np.random.default_rng(0)
    u, v = rng.random(50), rng.random(50)
    np.testing.assert_array_equal(copula_pdf(CopulaSpec("FGM", 0.0), u, v), 1.0)
    np.testing.assert_array_equal(copula_pdf(CopulaSpec("Product"), u, v), 1.0)
    # Gaussian copula density at the centre: 1/sqrt(1 - rho^2)
    assert copula_pdf(CopulaSpec("Gaussian", 0.7), 0.5, 0.5) == pytest.approx(1 / math.sqrt(1 - 0.49), rel=1e-14)


def _mixed_partial(spec, u, v, h=1e-4):
    c = lambda a, b: copula_cdf(spec, a, b)
    return (c(u + h, v + h) - c(u + h, v - h) - c(u - h, v + h) + c(u - h, v - h)) / (4 * h * h)


def test_gaussian_density_matches_mixed_partial_at_centre():
    spec = CopulaSpec("Gaussian", 0.7)
    assert _mixed_partial(spec, 0.5, 0.5) == pytest.approx(copula_pdf(spec, 0.5, 0.5), rel=1e-5)


@pytest.mark.parametrize("spec", random_specs(3, seed=11), ids=ids(random_specs(3, seed=11)))
def test_density_matches_mixed_partial(spec):
    g = np.linspace(0.1, 0.9, 7)
    u, v = np.meshgrid(g, g)
    u, v = u.ravel(), v.ravel()
    np.testing.assert_allclose(_mixed_partial(spec, u, v), copula_pdf(spec, u, v), rtol=1e-4, atol=1e-6)


@pytest.mark.parametrize("spec", random_specs(3, seed=12), ids=ids(random_specs(3, seed=12)))
def test_hfunc_matches_partial_derivative(spec):
    g = np.linspace(0.1, 0.9, 9)
    u, v = np.meshgrid(g, g)
    u, v = u.ravel(), v.ravel()
    h = 1e-6
    fd = (copula_cdf(spec, u + h, v) - copula_cdf(spec, u - h, v)) / (2 * h)
    np.testing.assert_allclose(copula_hfunc(spec, u, v), fd, rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("spec", SPECS, ids=ids(SPECS))
def test_density_integrates_to_one(spec):
    total, _ = integrate.dblquad(lambda v, u: copula_pdf(spec, u, v), 0, 1, 0, 1, epsabs=1e-7, epsrel=1e-7)
    assert total == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("spec", random_specs(), ids=ids(random_specs()))
def test_axioms(spec):
    t = np.linspace(0.0, 1.0, 41)
    zeros, ones = np.zeros_like(t), np.ones_like(t)
    np.testing.assert_allclose(copula_cdf(spec, t, zeros), 0.0, atol=1e-12)
    np.testing.assert_allclose(copula_cdf(spec, zeros, t), 0.0, atol=1e-12)
    np.testing.assert_allclose(copula_cdf(spec, t, ones), t, atol=1e-12)
    np.testing.assert_allclose(copula_cdf(spec, ones, t), t, atol=1e-12)
    # near-boundary interior points must agree with the boundary limits too
    eps = 1e-13
    np.testing.assert_allclose(copula_cdf(spec, t, ones - eps), t, atol=1e-12)


@pytest.mark.parametrize("spec", random_specs(), ids=ids(random_specs()))
def test_rectangle_inequality(spec):
    g = np.linspace(0.0, 1.0, 21)
    u, v = np.meshgrid(g, g, indexing="ij")
    c = copula_cdf(spec, u.ravel(), v.ravel()).reshape(u.shape)
    vol = c[1:, 1:] - c[:-1, 1:] - c[1:, :-1] + c[:-1, :-1]
    assert vol.shape == (20, 20)
    assert vol.min() >= -1e-12


@settings(max_examples=80, deadline=None)
@given(st.sampled_from(PARAMETRIC), st.floats(0, 1), st.floats(0.001, 0.999), st.floats(0.001, 0.999))
def test_frechet_bounds(fam, t, u, v):
    lo, hi = ALPHA_RANGE[fam]
    spec = CopulaSpec(fam, lo + t * (hi - lo))
    c = copula_cdf(spec, u, v)
    assert max(u + v - 1.0, 0.0) - 1e-12 <= c <= min(u, v) + 1e-12


def test_independence_limits():
    g = np.linspace(0.0, 1.0, 26)
    u, v = [a.ravel() for a in np.meshgrid(g, g)]
    for spec in (CopulaSpec("Gumbel", 1.0), CopulaSpec("FGM", 0.0), CopulaSpec("Clayton", 1e-10),
                 CopulaSpec("Clayton", 0.0), CopulaSpec("Gaussian", 0.0)):
        np.testing.assert_allclose(copula_cdf(spec, u, v), u * v, atol=1e-8)


def test_cdf_domain_errors():
    with pytest.raises(DomainError):
        copula_cdf(CopulaSpec("FGM", 0.5), 1.2, 0.5)
    with pytest.raises(DomainError):
        copula_cdf(CopulaSpec("FGM", 0.5), 0.2, np.nan)


@pytest.mark.parametrize("spec", SPECS, ids=ids(SPECS))
def test_sampler_kendall_tau_and_uniform_margins(spec):
    u = copula_sample(spec, 20_000, np.random.default_rng(5))
    assert np.all((u > 0) & (u < 1))
    for d in range(2):
        assert stats.kstest(u[:, d], "uniform").statistic < 0.015
    tau = stats.kendalltau(u[:, 0], u[:, 1]).statistic
    assert tau == pytest.approx(kendall_tau(spec), abs=0.015)


@pytest.mark.parametrize("spec", SPECS[:-1], ids=ids(SPECS[:-1]))
def test_sampler_matches_cdf(spec):
    u = copula_sample(spec, 20_000, np.random.default_rng(8))
    pts = np.array([[0.2, 0.3], [0.5, 0.5], [0.8, 0.6], [0.9, 0.9]])
    emp = [np.mean((u[:, 0] <= a) & (u[:, 1] <= b)) for a, b in pts]
    np.testing.assert_allclose(emp, copula_cdf(spec, pts[:, 0], pts[:, 1]), atol=0.012)


def test_sampler_determinism():
    spec = CopulaSpec("Arch14", 3.0)
    np.testing.assert_array_equal(copula_sample(spec, 100, 4), copula_sample(spec, 100, 4))


def test_pseudo_observation_examples():
    x = np.array([[10.0, 1.0], [20.0, 3.0], [30.0, 2.0]])
    np.testing.assert_allclose(pseudo_observations(x)[:, 0], [0.25, 0.5, 0.75])
    ties = np.array([[5.0, 0.0], [5.0, 1.0], [9.0, 2.0]])
    np.testing.assert_allclose(pseudo_observations(ties)[:, 0], [0.375, 0.375, 0.75])
    with pytest.raises(InsufficientDataError):
        pseudo_observations(np.array([[1.0, 2.0]]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(1, 4)), min_size=2, max_size=30))
def test_weighted_pseudo_observations_equal_repetition(rows):
    arr = np.array(rows, dtype=float)
    x, w = arr[:, :2], arr[:, 2].astype(int)
    rep = pseudo_observations(np.repeat(x, w, axis=0))
    np.testing.assert_allclose(np.repeat(pseudo_observations(x, w), w, axis=0), rep, rtol=1e-14)
    np.testing.assert_allclose(weighted_midranks(x[:, 0], w), np.unique(
        np.column_stack([x[:, 0], weighted_midranks(x[:, 0], w)]), axis=0)[np.searchsorted(
            np.unique(x[:, 0]), x[:, 0]), 1])


@pytest.mark.parametrize(
    "spec", [s for s in SPECS if s.family is not CopulaFamily.PRODUCT], ids=ids([s for s in SPECS if s.alpha is not None])
)
def test_pml_recovers_alpha_at_1e5(spec):
    u = copula_sample(spec, 100_000, np.random.default_rng(99))
    fit = copula_fit_pml(spec.family, pseudo_observations(u))
    assert fit.alpha == pytest.approx(spec.alpha, rel=0.10)
    if spec.family is CopulaFamily.FGM and spec.alpha == 1.0:
        assert abs(fit.alpha - 1.0) <= 0.1


def test_pml_is_a_likelihood_maximum():
    u = pseudo_observations(copula_sample(CopulaSpec("Gumbel", 2.0), 3000, np.random.default_rng(1)))
    fit = copula_fit_pml("Gumbel", u)
    best = copula_loglik(fit, u)
    for a in (fit.alpha * 0.99, fit.alpha * 1.01):
        assert copula_loglik(CopulaSpec("Gumbel", a), u) <= best


def test_pml_weights_equal_repetition():
    rng = np.random.default_rng(2)
    x = copula_sample(CopulaSpec("Clayton", 1.5), 300, rng)
    w = rng.integers(1, 5, size=300)
    a = copula_fit_pml("Clayton", pseudo_observations(x, w), w)
    b = copula_fit_pml("Clayton", pseudo_observations(np.repeat(x, w, axis=0)))
    assert a.alpha == pytest.approx(b.alpha, rel=1e-6)


def test_pml_boundary_flag():
    # negatively dependent data pushes Gumbel to its independence edge
    u = pseudo_observations(copula_sample(CopulaSpec("Gaussian", -0.6), 2000, np.random.default_rng(3)))
    fit = copula_fit_pml("Gumbel", u)
    assert fit.alpha == 1.0 and fit.at_boundary


def test_pml_rejects_boundary_points():
    with pytest.raises(DomainError):
        copula_fit_pml("FGM", np.array([[0.0, 0.5], [0.5, 0.5]]))


def test_logpdf_finite_in_interior():
    g = np.array([1e-10, 1e-4, 0.5, 1 - 1e-4, 1 - 1e-10])
    u, v = [a.ravel() for a in np.meshgrid(g, g)]
    for spec in random_specs(2, seed=4):
        assert np.all(np.isfinite(copula_logpdf(spec, u, v))), spec
