"""Copula-based mixture models in two dimensions.

A component density is ``c(F1(x1), F2(x2)) * f1(x1) * f2(x2)``; the mixture
sums components weighted by their coefficients. Densities are computed in log
space and combined with log-sum-exp. A point outside a component's marginal
support contributes zero density to that component.
"""

from dataclasses import dataclass
import json
import logging
import math

import numpy as np
from scipy.special import logsumexp

from cbmm._utils import PROB_EPS, as_rng
from cbmm.copulas import CopulaFamily, CopulaSpec, _logpdf as _copula_logpdf_inner, copula_cdf, copula_sample
from cbmm.exceptions import ParameterDomainError, UndefinedPosteriorError
from cbmm.marginals import MarginalSpec, marginal_cdf, marginal_logpdf, marginal_quantile, marginal_sf

log = logging.getLogger(__name__)

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class Component:
    weight: float
    marginals: tuple
    copula: CopulaSpec

    def __post_init__(self):
        w = float(self.weight)
        if not (0.0 < w <= 1.0):
            raise ParameterDomainError(f"component weight must lie in (0, 1], got {w}")
        margs = tuple(self.marginals)
        if len(margs) != 2:
            raise ParameterDomainError("a component has exactly 2 marginals")
        if not all(isinstance(m, MarginalSpec) for m in margs):
            raise TypeError("marginals must be MarginalSpec instances")
        if not isinstance(self.copula, CopulaSpec):
            raise TypeError("copula must be a CopulaSpec")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "marginals", margs)

    @property
    def n_params(self):
        """Marginal plus copula parameters (the weight is counted by the mixture)."""
        return sum(m.n_params for m in self.marginals) + self.copula.n_params

    def to_dict(self):
        return {
            "weight": self.weight,
            "marginals": [m.to_dict() for m in self.marginals],
            "copula": self.copula.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["weight"],
            tuple(MarginalSpec.from_dict(m) for m in d["marginals"]),
            CopulaSpec.from_dict(d["copula"]),
        )

    def describe(self):
        m1, m2 = self.marginals
        return f"pi={self.weight:.4g}  {m1} x {m2}  copula={self.copula}"


@dataclass(frozen=True)
class Cbmm:
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ParameterDomainError("a mixture needs at least one component")
        total = sum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-9:
            raise ParameterDomainError(f"component weights sum to {total}, not 1")
        object.__setattr__(self, "components", comps)

    @property
    def K(self):
        return len(self.components)

    @property
    def weights(self):
        return np.array([c.weight for c in self.components])

    @property
    def n_params(self):
        return self.K - 1 + sum(c.n_params for c in self.components)

    def to_dict(self):
        return {"components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(Component.from_dict(c) for c in d["components"]))

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def describe(self):
        return "\n".join(f"  [{k + 1}] {c.describe()}" for k, c in enumerate(self.components))


def normalized(components):
    """Build a Cbmm after renormalizing the component weights to sum to 1."""
    comps = list(components)
    total = sum(c.weight for c in comps)
    return Cbmm(tuple(Component(c.weight / total, c.marginals, c.copula) for c in comps))


def _points(x):
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != 2:
        raise ValueError(f"points must be 2-D, got shape {pts.shape}")
    return pts, single


def _unwrap(vals, single):
    return float(vals[0]) if single else vals


def component_logdensity(comp, x):
    pts, single = _points(x)
    m1, m2 = comp.marginals
    lf1 = marginal_logpdf(m1, pts[:, 0])
    lf2 = marginal_logpdf(m2, pts[:, 1])
    out = np.full(pts.shape[0], -np.inf)
    ok = np.isfinite(lf1) & np.isfinite(lf2)
    if np.any(ok):
        # normal scores stay exact deep in both tails; other families keep the
        # PROB_EPS floor their generators were validated on
        lo = _TINY if comp.copula.family is CopulaFamily.GAUSSIAN else PROB_EPS
        u1 = np.clip(marginal_cdf(m1, pts[ok, 0]), lo, 1.0 - PROB_EPS)
        u2 = np.clip(marginal_cdf(m2, pts[ok, 1]), lo, 1.0 - PROB_EPS)
        s1 = np.clip(marginal_sf(m1, pts[ok, 0]), _TINY, 1.0 - lo)
        s2 = np.clip(marginal_sf(m2, pts[ok, 1]), _TINY, 1.0 - lo)
        with np.errstate(invalid="ignore"):
            lc = _copula_logpdf_inner(comp.copula, u1, u2, s1, s2)
        out[ok] = np.where(np.isnan(lc), -np.inf, lc) + lf1[ok] + lf2[ok]
    return _unwrap(out, single)


def component_density(comp, x):
    """c(F1(x1), F2(x2)) f1(x1) f2(x2); zero outside the marginal supports."""
    pts, single = _points(x)
    return _unwrap(np.exp(component_logdensity(comp, pts)), single)


def component_cdf(comp, x):
    pts, single = _points(x)
    m1, m2 = comp.marginals
    u1 = marginal_cdf(m1, pts[:, 0])
    u2 = marginal_cdf(m2, pts[:, 1])
    return _unwrap(copula_cdf(comp.copula, u1, u2), single)


def weighted_log_densities(model, x):
    """(N, K) array of log(pi_k) + log p_k(x_n)."""
    pts, _ = _points(x)
    cols = [math.log(c.weight) + component_logdensity(c, pts) for c in model.components]
    return np.column_stack(cols)


def mixture_logdensity(model, x):
    pts, single = _points(x)
    return _unwrap(logsumexp(weighted_log_densities(model, pts), axis=1), single)


def mixture_density(model, x):
    pts, single = _points(x)
    return _unwrap(np.exp(mixture_logdensity(model, pts)), single)


def mixture_cdf(model, x):
    """sum_k pi_k C_k(F_k1(x1), F_k2(x2))."""
    pts, single = _points(x)
    out = np.zeros(pts.shape[0])
    for c in model.components:
        out += c.weight * component_cdf(c, pts)
    return _unwrap(np.clip(out, 0.0, 1.0), single)


def posterior(model, x):
    """Posterior component probabilities, shape (K,) or (N, K)."""
    pts, single = _points(x)
    lw = weighted_log_densities(model, pts)
    total = logsumexp(lw, axis=1)
    bad = ~np.isfinite(total)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise UndefinedPosteriorError(f"mixture density is zero at point {idx}", index=idx)
    post = np.exp(lw - total[:, None])
    post /= post.sum(axis=1, keepdims=True)
    return post[0] if single else post


def map_labels(model, x):
    """0-based index of the most probable component for each point."""
    pts, _ = _points(x)
    return np.argmax(weighted_log_densities(model, pts), axis=1)


def simulate(model, n, rng=None):
    """Draw ``n`` labelled points; returns ``(x, z)`` with 0-based labels z."""
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_rng(rng)
    z = rng.choice(model.K, size=n, p=model.weights)
    x = np.empty((n, 2))
    for k, comp in enumerate(model.components):
        idx = np.flatnonzero(z == k)
        if idx.size == 0:
            continue
        u = copula_sample(comp.copula, idx.size, rng)
        x[idx, 0] = marginal_quantile(comp.marginals[0], u[:, 0])
        x[idx, 1] = marginal_quantile(comp.marginals[1], u[:, 1])
    return x, z


def log_likelihood(model, data):
    """sum_n log p(x_n); ``-inf`` when some point has zero mixture density."""
    pts, _ = _points(data)
    ld = mixture_logdensity(model, pts)
    bad = ~np.isfinite(ld)
    if np.any(bad):
        log.warning("%d of %d points have zero mixture density (first at index %d)",
                    int(bad.sum()), ld.size, int(np.flatnonzero(bad)[0]))
        return -math.inf
    return float(np.sum(ld))
