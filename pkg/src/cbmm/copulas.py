"""Single-parameter bivariate copulas: density, CDF, sampling and PML fitting.

Densities and conditional distributions are evaluated in log space. The
Archimedean families (Gumbel, Clayton, Arch12, Arch14) share the generator
form ``C(u, v) = psi(phi(u) + phi(v))`` with

* Gumbel: ``phi(t) = (-ln t)^a``
* Clayton: ``phi(t) = (t^-a - 1) / a``
* Arch12: ``phi(t) = (1/t - 1)^a``
* Arch14: ``phi(t) = (t^(-1/a) - 1)^a``
"""

from dataclasses import dataclass, field
from enum import Enum
import math

import numpy as np
from scipy import optimize, special

from cbmm._bvn import bvn_cdf
from cbmm._utils import PROB_EPS, as_rng, as_weights, scalar_or_array
from cbmm.exceptions import DomainError, FitError, InsufficientDataError, ParameterDomainError


class CopulaFamily(str, Enum):
    GAUSSIAN = "Gaussian"
    GUMBEL = "Gumbel"
    CLAYTON = "Clayton"
    FGM = "FGM"
    ARCH12 = "Arch12"
    ARCH14 = "Arch14"
    PRODUCT = "Product"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace(" ", "").replace("_", "")
        try:
            return _ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown copula family {name!r}") from None

    @property
    def n_params(self):
        return 0 if self is CopulaFamily.PRODUCT else 1


_ALIASES = {f.value.lower(): f for f in CopulaFamily}
_ALIASES.update(
    {
        "gumble": CopulaFamily.GUMBEL,
        "normal": CopulaFamily.GAUSSIAN,
        "independence": CopulaFamily.PRODUCT,
        "independent": CopulaFamily.PRODUCT,
        "farliegumbelmorgenstern": CopulaFamily.FGM,
    }
)

ALL_COPULAS = (
    CopulaFamily.GUMBEL,
    CopulaFamily.GAUSSIAN,
    CopulaFamily.CLAYTON,
    CopulaFamily.FGM,
    CopulaFamily.ARCH12,
    CopulaFamily.ARCH14,
    CopulaFamily.PRODUCT,
)

# (lower, upper, lower_closed) of the admissible alpha domain
_DOMAIN = {
    CopulaFamily.GAUSSIAN: (-1.0, 1.0, False),
    CopulaFamily.GUMBEL: (1.0, math.inf, True),
    CopulaFamily.CLAYTON: (0.0, math.inf, True),
    CopulaFamily.FGM: (-1.0, 1.0, True),
    CopulaFamily.ARCH12: (1.0, math.inf, True),
    CopulaFamily.ARCH14: (1.0, math.inf, True),
}

# search interval used by the PML fit
ALPHA_SEARCH = {
    CopulaFamily.GAUSSIAN: (-0.999, 0.999),
    CopulaFamily.GUMBEL: (1.0, 50.0),
    CopulaFamily.CLAYTON: (0.0, 50.0),
    CopulaFamily.FGM: (-1.0, 1.0),
    CopulaFamily.ARCH12: (1.0, 50.0),
    CopulaFamily.ARCH14: (1.0, 50.0),
}


@dataclass(frozen=True)
class CopulaSpec:
    """One bivariate copula: family tag and dependence parameter."""

    family: CopulaFamily
    alpha: float | None = None
    at_boundary: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self):
        fam = CopulaFamily.parse(self.family)
        object.__setattr__(self, "family", fam)
        if fam is CopulaFamily.PRODUCT:
            if self.alpha is not None:
                raise ParameterDomainError("Product copula takes no parameter")
            return
        if self.alpha is None:
            raise ParameterDomainError(f"{fam.value} copula requires alpha")
        a = float(self.alpha)
        lo, hi, lo_closed = _DOMAIN[fam]
        ok = math.isfinite(a) and (a >= lo if lo_closed else a > lo)
        ok = ok and (a <= hi if fam is CopulaFamily.FGM else a < hi)
        if not ok:
            raise ParameterDomainError(f"{fam.value} alpha={a} outside its domain")
        object.__setattr__(self, "alpha", a)

    @property
    def n_params(self):
        return self.family.n_params

    def to_dict(self):
        return {"family": self.family.value, "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], d.get("alpha"))

    def __str__(self):
        if self.alpha is None:
            return self.family.value
        return f"{self.family.value}({self.alpha:.4g})"


# ---------------------------------------------------------------------------
# log-space building blocks


def _log_s(la, lb, alpha):
    """log(exp(alpha*la) + exp(alpha*lb)) for the Archimedean sum."""
    return np.logaddexp(alpha * la, alpha * lb)


def _clayton_log_s(lu, lv, alpha):
    """log(u^-alpha + v^-alpha - 1) with care near alpha -> 0."""
    a = -alpha * lu
    b = -alpha * lv
    m = np.maximum(a, b)
    small = m < 1.0
    ms = np.where(small, 0.0, m)
    with np.errstate(over="ignore", invalid="ignore"):
        near = np.log1p(np.expm1(np.where(small, a, 0.0)) + np.expm1(np.where(small, b, 0.0)))
        far = ms + np.log(np.exp(a - ms) + np.exp(b - ms) - np.exp(-ms))
    return np.where(small, near, far)


def _arch_parts(family, u, v, alpha):
    """log of phi-base terms ``la, lb`` for Gumbel/Arch12/Arch14."""
    lu, lv = np.log(u), np.log(v)
    if family is CopulaFamily.GUMBEL:
        return np.log(-lu), np.log(-lv), lu, lv
    if family is CopulaFamily.ARCH12:
        return np.log1p(-u) - lu, np.log1p(-v) - lv, lu, lv
    # ARCH14: a = u^(-1/alpha) - 1
    return np.log(np.expm1(-lu / alpha)), np.log(np.expm1(-lv / alpha)), lu, lv


def _interior(u1, u2):
    u = np.asarray(u1, dtype=float)
    v = np.asarray(u2, dtype=float)
    u, v = np.broadcast_arrays(u, v)
    return u, v


def copula_logpdf(spec, u1, u2):
    """Log density at interior points; raises ``DomainError`` on the boundary."""
    u, v = _interior(u1, u2)
    if np.any(~(u > 0.0) | ~(u < 1.0) | ~(v > 0.0) | ~(v < 1.0)):
        raise DomainError("copula density requires points strictly inside (0, 1)^2")
    out = _logpdf(spec, u, v)
    return scalar_or_array(out, u1 if np.ndim(u1) else u2)


def _logpdf(spec, u, v, su=None, sv=None):
    """Log density; ``su``, ``sv`` optionally give 1 - u and 1 - v exactly."""
    fam, a = spec.family, spec.alpha
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if fam is CopulaFamily.PRODUCT or (fam is CopulaFamily.CLAYTON and a == 0.0):
            return np.zeros(np.shape(u))
        if fam is CopulaFamily.FGM:
            return np.log1p(a * (1.0 - 2.0 * u) * (1.0 - 2.0 * v))
        if fam is CopulaFamily.GAUSSIAN:
            x, y = _normal_scores(u, su), _normal_scores(v, sv)
            one_m = (1.0 - a) * (1.0 + a)
            return -0.5 * math.log(one_m) - (a * a * (x * x + y * y) - 2.0 * a * x * y) / (2.0 * one_m)
        if fam is CopulaFamily.CLAYTON:
            lu, lv = np.log(u), np.log(v)
            ls = _clayton_log_s(lu, lv, a)
            return math.log1p(a) - (1.0 + a) * (lu + lv) - (1.0 / a + 2.0) * ls
        la, lb, lu, lv = _arch_parts(fam, u, v, a)
        ls = _log_s(la, lb, a)
        r = np.exp(ls / a)
        if fam is CopulaFamily.GUMBEL:
            return -r + (1.0 / a - 2.0) * ls + np.log(r + a - 1.0) + (a - 1.0) * (la + lb) - lu - lv
        if fam is CopulaFamily.ARCH12:
            return (
                (1.0 / a - 2.0) * ls
                - 3.0 * np.log1p(r)
                + np.log(a - 1.0 + (a + 1.0) * r)
                + (a - 1.0) * (la + lb)
                - 2.0 * (lu + lv)
            )
        return (
            -math.log(a)
            + (1.0 / a - 2.0) * ls
            - (a + 2.0) * np.log1p(r)
            + np.log(a - 1.0 + 2.0 * a * r)
            + (a - 1.0) * (la + lb)
            - (1.0 / a + 1.0) * (lu + lv)
        )


def _normal_scores(u, su):
    if su is None:
        return special.ndtri(u)
    # the upper tail is taken from the complement, which keeps its precision
    return np.where(u <= 0.5, special.ndtri(u), -special.ndtri(su))


def copula_pdf(spec, u1, u2):
    """Copula density, the mixed second partial derivative of the CDF."""
    out = np.exp(copula_logpdf(spec, u1, u2))
    return scalar_or_array(out, u1 if np.ndim(u1) else u2)


def copula_cdf(spec, u1, u2):
    """Copula CDF on the closed unit square; exact on the boundary."""
    u, v = _interior(u1, u2)
    if np.any((u < 0.0) | (u > 1.0) | (v < 0.0) | (v > 1.0)) or np.any(np.isnan(u) | np.isnan(v)):
        raise DomainError("copula CDF requires points inside [0, 1]^2")
    out = np.empty(u.shape)
    zero = (u == 0.0) | (v == 0.0)
    u_one = (u == 1.0) & ~zero
    v_one = (v == 1.0) & ~zero & ~u_one
    inner = ~(zero | u_one | v_one)
    out[zero] = 0.0
    out[u_one] = v[u_one]
    out[v_one] = u[v_one]
    if np.any(inner):
        out[inner] = _cdf(spec, u[inner], v[inner])
    out = np.clip(out, 0.0, np.minimum(u, v))
    return scalar_or_array(out, u1 if np.ndim(u1) else u2)


def _cdf(spec, u, v):
    fam, a = spec.family, spec.alpha
    if fam is CopulaFamily.PRODUCT or (fam is CopulaFamily.CLAYTON and a == 0.0):
        return u * v
    if fam is CopulaFamily.FGM:
        return u * v * (1.0 + a * (1.0 - u) * (1.0 - v))
    if fam is CopulaFamily.GAUSSIAN:
        return bvn_cdf(special.ndtri(u), special.ndtri(v), a)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if fam is CopulaFamily.CLAYTON:
            return np.exp(-_clayton_log_s(np.log(u), np.log(v), a) / a)
        la, lb, _, _ = _arch_parts(fam, u, v, a)
        r = np.exp(_log_s(la, lb, a) / a)
        if fam is CopulaFamily.GUMBEL:
            return np.exp(-r)
        if fam is CopulaFamily.ARCH12:
            return 1.0 / (1.0 + r)
        return np.exp(-a * np.log1p(r))


def copula_hfunc(spec, u1, u2):
    """Conditional CDF ``dC/du1``: P(U2 <= u2 | U1 = u1), interior points."""
    u, v = _interior(u1, u2)
    fam, a = spec.family, spec.alpha
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if fam is CopulaFamily.PRODUCT or (fam is CopulaFamily.CLAYTON and a == 0.0):
            out = v.astype(float)
        elif fam is CopulaFamily.FGM:
            out = v * (1.0 + a * (1.0 - v) * (1.0 - 2.0 * u))
        elif fam is CopulaFamily.GAUSSIAN:
            x, y = special.ndtri(u), special.ndtri(v)
            out = special.ndtr((y - a * x) / math.sqrt((1.0 - a) * (1.0 + a)))
        elif fam is CopulaFamily.CLAYTON:
            lu, lv = np.log(u), np.log(v)
            out = np.exp(-(1.0 + a) * lu - (1.0 / a + 1.0) * _clayton_log_s(lu, lv, a))
        else:
            la, lb, lu, _ = _arch_parts(fam, u, v, a)
            ls = _log_s(la, lb, a)
            r = np.exp(ls / a)
            if fam is CopulaFamily.GUMBEL:
                lh = -r + (1.0 / a - 1.0) * ls + (a - 1.0) * la - lu
            elif fam is CopulaFamily.ARCH12:
                lh = (1.0 / a - 1.0) * ls - 2.0 * np.log1p(r) + (a - 1.0) * la - 2.0 * lu
            else:
                lh = (1.0 / a - 1.0) * ls - (a + 1.0) * np.log1p(r) + (a - 1.0) * la - (1.0 / a + 1.0) * lu
            out = np.exp(lh)
    out = np.clip(np.nan_to_num(out, nan=0.0), 0.0, 1.0)
    return scalar_or_array(out, u1 if np.ndim(u1) else u2)


def _invert_hfunc(spec, u, w, tol=1e-12):
    """Solve ``hfunc(u, v) = w`` for v by bisection (monotone in v)."""
    lo = np.zeros_like(u)
    hi = np.ones_like(u)
    n_iter = int(math.ceil(math.log2(1.0 / tol)))
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        below = copula_hfunc(spec, u, np.clip(mid, PROB_EPS, 1.0 - PROB_EPS)) < w
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def copula_sample(spec, n, rng=None):
    """Draw ``n`` pseudo-samples, shape (n, 2), strictly inside the unit square.

    Gaussian uses correlated normals; the other families use the
    conditional-distribution method with closed-form inversion for Clayton
    and FGM and bisection otherwise.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_rng(rng)
    fam, a = spec.family, spec.alpha
    if fam is CopulaFamily.GAUSSIAN:
        z = rng.standard_normal((n, 2))
        z2 = a * z[:, 0] + math.sqrt((1.0 - a) * (1.0 + a)) * z[:, 1]
        out = np.column_stack([special.ndtr(z[:, 0]), special.ndtr(z2)])
        return np.clip(out, PROB_EPS, 1.0 - PROB_EPS)
    uw = np.clip(rng.random((n, 2)), PROB_EPS, 1.0 - PROB_EPS)
    u, w = uw[:, 0], uw[:, 1]
    if fam is CopulaFamily.PRODUCT or (fam is CopulaFamily.CLAYTON and a == 0.0):
        v = w
    elif fam is CopulaFamily.FGM:
        A = a * (1.0 - 2.0 * u)
        v = 2.0 * w / ((1.0 + A) + np.sqrt((1.0 + A) ** 2 - 4.0 * A * w))
    elif fam is CopulaFamily.CLAYTON:
        # v = ((w u^(a+1))^(-a/(a+1)) - u^-a + 1)^(-1/a), in log space
        lu, lw = np.log(u), np.log(w)
        t1 = -a / (a + 1.0) * (lw + (a + 1.0) * lu)
        t2 = -a * lu
        m = np.maximum(t1, t2)
        ls = m + np.log(np.exp(t1 - m) - np.exp(t2 - m) + np.exp(-m))
        v = np.exp(-ls / a)
    else:
        v = _invert_hfunc(spec, u, w)
    return np.clip(np.column_stack([u, v]), PROB_EPS, 1.0 - PROB_EPS)


# ---------------------------------------------------------------------------
# estimation


def weighted_midranks(values, weights=None):
    """Midranks of ``values`` where each value is repeated ``weights`` times."""
    values = np.asarray(values, dtype=float)
    w = as_weights(weights, values.size)
    uniq, inv = np.unique(values, return_inverse=True)
    block = np.bincount(inv.ravel(), weights=w, minlength=uniq.size)
    before = np.concatenate([[0.0], np.cumsum(block)[:-1]])
    mid = before + 0.5 * (block + 1.0)
    return mid[inv.ravel()]


def pseudo_observations(samples, weights=None):
    """Rank-transform 2-D samples into the open unit square.

    Each coordinate gets its (mid)rank divided by ``Q + 1`` where ``Q`` is the
    total weight, so ties share their average rank and no value reaches 0 or 1.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ValueError("samples must have shape (n, 2)")
    w = as_weights(weights, x.shape[0])
    q = float(w.sum())
    if x.shape[0] < 2 or q < 2:
        raise InsufficientDataError("pseudo-observations need at least 2 points")
    return np.column_stack([weighted_midranks(x[:, d], w) / (q + 1.0) for d in range(2)])


def copula_loglik(spec, pseudo, weights=None):
    u = np.asarray(pseudo, dtype=float)
    w = as_weights(weights, u.shape[0])
    return float(np.dot(w, copula_logpdf(spec, u[:, 0], u[:, 1])))


def _to_search(fam, alpha):
    if fam is CopulaFamily.CLAYTON:
        return math.log(alpha + 1.0)
    if fam in (CopulaFamily.GUMBEL, CopulaFamily.ARCH12, CopulaFamily.ARCH14):
        return math.log(alpha)
    return alpha


def _from_search(fam, t):
    if fam is CopulaFamily.CLAYTON:
        return max(math.expm1(t), 0.0)
    if fam in (CopulaFamily.GUMBEL, CopulaFamily.ARCH12, CopulaFamily.ARCH14):
        return max(math.exp(t), 1.0)
    return t


def copula_fit_pml(family, pseudo, weights=None, xatol=1e-7):
    """Pseudo maximum-likelihood estimate of the copula parameter.

    A bounded Brent search runs on ``alpha`` (Gaussian, FGM), ``log(alpha)``
    (Gumbel, Arch12, Arch14) or ``log(alpha + 1)`` (Clayton) inside
    ``ALPHA_SEARCH``. If the likelihood is maximal at an edge of that
    interval, alpha is clamped there and the returned CopulaSpec carries ``at_boundary``.
    """
    fam = CopulaFamily.parse(family)
    if fam is CopulaFamily.PRODUCT:
        return CopulaSpec(fam)
    u = np.asarray(pseudo, dtype=float)
    if u.ndim != 2 or u.shape[1] != 2 or u.shape[0] == 0:
        raise InsufficientDataError("pseudo-observations must be a non-empty (n, 2) array")
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise DomainError("pseudo-observations must be strictly inside (0, 1)^2")
    w = as_weights(weights, u.shape[0])
    wsum = float(w.sum())
    u1, u2 = u[:, 0], u[:, 1]

    def objective(t):
        spec = CopulaSpec(fam, _from_search(fam, t))
        val = -np.dot(w, _logpdf(spec, u1, u2)) / wsum
        return val if math.isfinite(val) else np.inf

    lo, hi = (_to_search(fam, x) for x in ALPHA_SEARCH[fam])
    res = optimize.minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": xatol})
    best_t, best_f = float(res.x), float(res.fun)
    at_edge = False
    for edge in (lo, hi):
        f_edge = objective(edge)
        if f_edge <= best_f:
            best_t, best_f, at_edge = edge, f_edge, True
    if not math.isfinite(best_f):
        raise FitError(f"{fam.value} pseudo-likelihood is not finite on the search interval")
    spec = CopulaSpec(fam, _from_search(fam, best_t), at_boundary=at_edge)
    if not res.success:
        raise FitError(f"{fam.value} PML search did not converge: {res.message}", best=spec)
    return spec
