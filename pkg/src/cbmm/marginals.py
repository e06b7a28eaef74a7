"""Univariate marginal families with location-scale shifting.

Every family is defined in standardized form (``loc=0``, ``scale=1``) and
shifted by ``z = (y - loc) / scale`` with density ``f(z) / scale``.
Parameters are reported shape-first, then ``loc``, then ``scale``; a
Student's t written ``(2, 2, 0.7)`` has 2 degrees of freedom, ``loc=2`` and
``scale=0.7``.
"""

from dataclasses import dataclass, field
from enum import Enum
import math

import numpy as np
from scipy import optimize, special

from cbmm._utils import PROB_EPS, as_rng, as_weights, scalar_or_array, weighted_median
from cbmm.exceptions import (
    DegenerateDataError,
    DomainError,
    FitError,
    InsufficientDataError,
    ParameterDomainError,
)

_LOG_2PI = math.log(2.0 * math.pi)


class MarginalFamily(str, Enum):
    GAUSSIAN = "Gaussian"
    GAMMA = "Gamma"
    BETA = "Beta"
    BETA_PRIME = "BetaPrime"
    FISK = "Fisk"
    LAPLACE = "Laplace"
    STUDENT_T = "StudentT"

    @classmethod
    def parse(cls, name):
        """Look up a family by name, accepting common spellings ("T", "Normal")."""
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace(" ", "").replace("_", "").replace("'", "")
        try:
            return _ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown marginal family {name!r}") from None

    @property
    def n_shapes(self):
        return _N_SHAPES[self]

    @property
    def n_params(self):
        return _N_SHAPES[self] + 2


_N_SHAPES = {
    MarginalFamily.GAUSSIAN: 0,
    MarginalFamily.LAPLACE: 0,
    MarginalFamily.GAMMA: 1,
    MarginalFamily.FISK: 1,
    MarginalFamily.STUDENT_T: 1,
    MarginalFamily.BETA: 2,
    MarginalFamily.BETA_PRIME: 2,
}

_ALIASES = {f.value.lower(): f for f in MarginalFamily}
_ALIASES.update(
    {
        "normal": MarginalFamily.GAUSSIAN,
        "t": MarginalFamily.STUDENT_T,
        "student": MarginalFamily.STUDENT_T,
        "studentst": MarginalFamily.STUDENT_T,
        "betap": MarginalFamily.BETA_PRIME,
        "loglogistic": MarginalFamily.FISK,
    }
)

ALL_MARGINALS = (
    MarginalFamily.GAMMA,
    MarginalFamily.FISK,
    MarginalFamily.GAUSSIAN,
    MarginalFamily.STUDENT_T,
    MarginalFamily.LAPLACE,
    MarginalFamily.BETA,
    MarginalFamily.BETA_PRIME,
)


@dataclass(frozen=True)
class MarginalSpec:
    """One univariate distribution: family, shapes, location and scale."""

    family: MarginalFamily
    shape1: float | None = None
    shape2: float | None = None
    loc: float = 0.0
    scale: float = 1.0
    converged: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        fam = MarginalFamily.parse(self.family)
        object.__setattr__(self, "family", fam)
        n_shapes = fam.n_shapes
        shapes = (self.shape1, self.shape2)
        for i, s in enumerate(shapes):
            if i < n_shapes:
                if s is None:
                    raise ParameterDomainError(f"{fam.value} requires shape{i + 1}")
                s = float(s)
                if not (s > 0.0 and math.isfinite(s)):
                    raise ParameterDomainError(f"{fam.value} shape{i + 1} must be > 0, got {s}")
                object.__setattr__(self, f"shape{i + 1}", s)
            elif s is not None:
                raise ParameterDomainError(f"{fam.value} takes no shape{i + 1}")
        loc, scale = float(self.loc), float(self.scale)
        if not math.isfinite(loc):
            raise ParameterDomainError(f"loc must be finite, got {loc}")
        if not (scale > 0.0 and math.isfinite(scale)):
            raise ParameterDomainError(f"scale must be > 0, got {scale}")
        object.__setattr__(self, "loc", loc)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def from_params(cls, family, params):
        """Build from a shape-first tuple, e.g. ``("StudentT", (2, 2, 0.7))``."""
        fam = MarginalFamily.parse(family)
        params = [float(p) for p in params]
        if len(params) != fam.n_params:
            raise ParameterDomainError(
                f"{fam.value} takes {fam.n_params} parameters, got {len(params)}"
            )
        shapes = params[: fam.n_shapes] + [None] * (2 - fam.n_shapes)
        return cls(fam, shapes[0], shapes[1], params[-2], params[-1])

    @property
    def shapes(self):
        return tuple(s for s in (self.shape1, self.shape2) if s is not None)

    @property
    def params(self):
        """Shape-first parameter tuple ``(*shapes, loc, scale)``."""
        return self.shapes + (self.loc, self.scale)

    @property
    def n_params(self):
        return self.family.n_params

    def to_dict(self):
        return {
            "family": self.family.value,
            "shape1": self.shape1,
            "shape2": self.shape2,
            "loc": self.loc,
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], d.get("shape1"), d.get("shape2"), d["loc"], d["scale"])

    def __str__(self):
        return f"{self.family.value}({', '.join(f'{p:.4g}' for p in self.params)})"

    # thin conveniences over the module functions
    def pdf(self, y):
        return marginal_pdf(self, y)

    def logpdf(self, y):
        return marginal_logpdf(self, y)

    def cdf(self, y):
        return marginal_cdf(self, y)

    def quantile(self, p):
        return marginal_quantile(self, p)


# ---------------------------------------------------------------------------
# standardized forms


def _std_support(family, shapes):
    if family in (MarginalFamily.GAUSSIAN, MarginalFamily.LAPLACE, MarginalFamily.STUDENT_T):
        return -np.inf, np.inf
    if family is MarginalFamily.BETA:
        return 0.0, 1.0
    return 0.0, np.inf


def _std_logpdf(family, shapes, z):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if family is MarginalFamily.GAUSSIAN:
            return -0.5 * z * z - 0.5 * _LOG_2PI
        if family is MarginalFamily.LAPLACE:
            return -np.abs(z) - math.log(2.0)
        if family is MarginalFamily.STUDENT_T:
            (nu,) = shapes
            c = (
                special.gammaln(0.5 * (nu + 1.0))
                - special.gammaln(0.5 * nu)
                - 0.5 * math.log(math.pi * nu)
            )
            return c - 0.5 * (nu + 1.0) * np.log1p(z * z / nu)
        inside = z > 0.0
        if family is MarginalFamily.BETA:
            inside &= z < 1.0
        zs = np.where(inside, z, 0.5)
        if family is MarginalFamily.GAMMA:
            (a,) = shapes
            out = (a - 1.0) * np.log(zs) - zs - special.gammaln(a)
        elif family is MarginalFamily.BETA:
            a, b = shapes
            out = (a - 1.0) * np.log(zs) + (b - 1.0) * np.log1p(-zs) - special.betaln(a, b)
        elif family is MarginalFamily.BETA_PRIME:
            a, b = shapes
            out = (a - 1.0) * np.log(zs) - (a + b) * np.log1p(zs) - special.betaln(a, b)
        else:  # FISK
            (c,) = shapes
            lz = np.log(zs)
            out = math.log(c) + (c - 1.0) * lz - 2.0 * np.logaddexp(0.0, c * lz)
        return np.where(inside, out, -np.inf)


def _std_cdf(family, shapes, z):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if family is MarginalFamily.GAUSSIAN:
            return 0.5 * special.erfc(-z / math.sqrt(2.0))
        if family is MarginalFamily.LAPLACE:
            return np.where(z < 0.0, 0.5 * np.exp(np.minimum(z, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(z, 0.0)))
        if family is MarginalFamily.STUDENT_T:
            (nu,) = shapes
            x = nu / (nu + z * z)
            tail = 0.5 * special.betainc(0.5 * nu, 0.5, x)
            return np.where(z < 0.0, tail, 1.0 - tail)
        zp = np.maximum(z, 0.0)
        if family is MarginalFamily.GAMMA:
            return special.gammainc(shapes[0], zp)
        if family is MarginalFamily.BETA:
            return special.betainc(shapes[0], shapes[1], np.minimum(zp, 1.0))
        if family is MarginalFamily.BETA_PRIME:
            return np.where(np.isinf(zp), 1.0, special.betainc(shapes[0], shapes[1], zp / (1.0 + zp)))
        (c,) = shapes
        return np.where(zp > 0.0, special.expit(c * np.log(zp)), 0.0)


def _std_sf(family, shapes, z):
    """Survival function 1 - F, computed without cancellation in the upper tail."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if family is MarginalFamily.GAUSSIAN:
            return 0.5 * special.erfc(z / math.sqrt(2.0))
        if family is MarginalFamily.LAPLACE:
            return np.where(z > 0.0, 0.5 * np.exp(-np.maximum(z, 0.0)), 1.0 - 0.5 * np.exp(np.minimum(z, 0.0)))
        if family is MarginalFamily.STUDENT_T:
            (nu,) = shapes
            tail = 0.5 * special.betainc(0.5 * nu, 0.5, nu / (nu + z * z))
            return np.where(z > 0.0, tail, 1.0 - tail)
        zp = np.maximum(z, 0.0)
        if family is MarginalFamily.GAMMA:
            return special.gammaincc(shapes[0], zp)
        if family is MarginalFamily.BETA:
            return special.betaincc(shapes[0], shapes[1], np.minimum(zp, 1.0))
        if family is MarginalFamily.BETA_PRIME:
            return np.where(np.isinf(zp), 0.0, special.betainc(shapes[1], shapes[0], 1.0 / (1.0 + zp)))
        (c,) = shapes
        return np.where(zp > 0.0, special.expit(-c * np.log(zp)), 1.0)


def _std_quantile(family, shapes, p):
    if family is MarginalFamily.GAUSSIAN:
        return special.ndtri(p)
    if family is MarginalFamily.LAPLACE:
        return np.where(p < 0.5, np.log(2.0 * p), -np.log(2.0 * (1.0 - p)))
    if family is MarginalFamily.STUDENT_T:
        return special.stdtrit(shapes[0], p)
    if family is MarginalFamily.GAMMA:
        return special.gammaincinv(shapes[0], p)
    if family is MarginalFamily.BETA:
        return special.betaincinv(shapes[0], shapes[1], p)
    if family is MarginalFamily.BETA_PRIME:
        x = special.betaincinv(shapes[0], shapes[1], p)
        return x / (1.0 - x)
    (c,) = shapes
    return np.exp((np.log(p) - np.log1p(-p)) / c)


# ---------------------------------------------------------------------------
# public evaluation


def support(spec):
    """(lower, upper) bounds of the shifted support."""
    lo, hi = _std_support(spec.family, spec.shapes)
    return spec.loc + spec.scale * lo, spec.loc + spec.scale * hi


def marginal_logpdf(spec, y):
    y_arr = np.asarray(y, dtype=float)
    z = (y_arr - spec.loc) / spec.scale
    out = _std_logpdf(spec.family, spec.shapes, z) - math.log(spec.scale)
    return scalar_or_array(out, y)


def marginal_pdf(spec, y):
    """Density at ``y``; zero outside the support."""
    y_arr = np.asarray(y, dtype=float)
    out = np.exp(marginal_logpdf(spec, y_arr))
    return scalar_or_array(out, y)


def marginal_cdf(spec, y):
    y_arr = np.asarray(y, dtype=float)
    z = (y_arr - spec.loc) / spec.scale
    out = np.clip(_std_cdf(spec.family, spec.shapes, z), 0.0, 1.0)
    return scalar_or_array(out, y)


def marginal_sf(spec, y):
    """Survival function ``1 - F(y)``, accurate where F is close to 1."""
    y_arr = np.asarray(y, dtype=float)
    z = (y_arr - spec.loc) / spec.scale
    out = np.clip(_std_sf(spec.family, spec.shapes, z), 0.0, 1.0)
    return scalar_or_array(out, y)


def marginal_quantile(spec, p):
    """Inverse CDF; ``p`` must lie strictly inside (0, 1)."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(~(p_arr > 0.0) | ~(p_arr < 1.0)):
        raise DomainError("quantile probabilities must lie in the open interval (0, 1)")
    out = spec.loc + spec.scale * _std_quantile(spec.family, spec.shapes, p_arr)
    return scalar_or_array(out, p)


def marginal_sample(spec, n, rng=None):
    """Draw ``n`` values by inverse-CDF sampling from a seeded stream."""
    if int(n) < 1:
        raise ValueError("n must be >= 1")
    u = uniform_open(as_rng(rng), int(n))
    return spec.loc + spec.scale * _std_quantile(spec.family, spec.shapes, u)


def uniform_open(rng, size):
    """Uniform draws strictly inside (0, 1)."""
    return np.clip(rng.random(size), PROB_EPS, 1.0 - PROB_EPS)


# ---------------------------------------------------------------------------
# maximum likelihood

_MAX_LOG_SHAPE = 20.0


def _neg_loglik(family, shapes, loc, scale, y, w, wsum):
    z = (y - loc) / scale
    lp = _std_logpdf(family, shapes, z)
    val = -(np.dot(w, lp) / wsum - math.log(scale))
    return val if math.isfinite(val) else np.inf


class _Bounded:
    """Parameter transform keeping every sample strictly inside the support."""

    def __init__(self, family, ymin, ymax, margin):
        self.family = family
        self.n_shapes = family.n_shapes
        self.lo_edge = ymin - margin
        self.hi_edge = ymax + margin

    def pack(self, shapes, loc, scale, floor):
        eta = [math.log(s) for s in shapes]
        gap_lo = max(self.lo_edge - loc, floor)
        eta.append(math.log(gap_lo))
        if self.family is MarginalFamily.BETA:
            gap_hi = max(loc + scale - self.hi_edge, floor)
            eta.append(math.log(gap_hi))
        else:
            eta.append(math.log(scale))
        return np.array(eta)

    def unpack(self, eta):
        eta = np.clip(eta, -_MAX_LOG_SHAPE * 2, _MAX_LOG_SHAPE)
        shapes = tuple(math.exp(e) for e in eta[: self.n_shapes])
        loc = self.lo_edge - math.exp(eta[self.n_shapes])
        if self.family is MarginalFamily.BETA:
            scale = self.hi_edge + math.exp(eta[self.n_shapes + 1]) - loc
        else:
            scale = math.exp(eta[self.n_shapes + 1])
        return shapes, loc, scale


class _Free:
    """Student's t: log degrees of freedom, free loc, log scale."""

    family = MarginalFamily.STUDENT_T

    def pack(self, shapes, loc, scale, floor):
        return np.array([math.log(shapes[0]), loc, math.log(scale)])

    def unpack(self, eta):
        return (math.exp(min(eta[0], _MAX_LOG_SHAPE)),), float(eta[1]), math.exp(min(eta[2], _MAX_LOG_SHAPE))


def _wmoments(y, w, wsum):
    mean = np.dot(w, y) / wsum
    var = np.dot(w, (y - mean) ** 2) / wsum
    return mean, var


def _starts(family, y, w, wsum, ymin, ymax, margin):
    """Moment-based starting points, several loc guesses for shifted families."""
    mean, var = _wmoments(y, w, wsum)
    sd = math.sqrt(var)
    rng_ = ymax - ymin
    out = []
    if family is MarginalFamily.STUDENT_T:
        med = weighted_median(y, w)
        mad = weighted_median(np.abs(y - med), w) / 0.6745
        for nu in (3.0, 10.0, 50.0):
            out.append(((nu,), med, max(mad, 1e-3 * sd, 1e-300)))
        return out
    if family is MarginalFamily.BETA:
        for gap in (0.01, 0.1, 0.5):
            loc = ymin - margin - gap * rng_
            scale = ymax + margin + gap * rng_ - loc
            x = (y - loc) / scale
            m, v = _wmoments(x, w, wsum)
            common = max(m * (1.0 - m) / max(v, 1e-300) - 1.0, 1e-2)
            out.append(((max(m * common, 1e-2), max((1.0 - m) * common, 1e-2)), loc, scale))
        return out
    for gap in (0.02, 0.2, 1.0, 3.0):
        loc = ymin - margin - gap * sd
        yp = y - loc
        if family is MarginalFamily.GAMMA:
            m, v = _wmoments(yp, w, wsum)
            out.append(((m * m / v,), loc, v / m))
        elif family is MarginalFamily.FISK:
            lz = np.log(yp)
            mu, vz = _wmoments(lz, w, wsum)
            out.append(((math.pi / math.sqrt(3.0 * vz),), loc, math.exp(mu)))
        else:  # BETA_PRIME
            s = weighted_median(yp, w)
            m, v = _wmoments(yp / s, w, wsum)
            b = 2.0 + m * (m + 1.0) / v
            out.append(((max(m * (b - 1.0), 1e-2), b), loc, s))
    return out


def marginal_fit_mle(family, samples, weights=None, start=None, strict=True):
    """Maximum-likelihood fit of one family to (optionally weighted) samples.

    Gaussian and Laplace use their closed forms. The other families run a
    Nelder-Mead simplex over log-shapes, log-scale and a loc transform that
    keeps every sample inside the support (shifted families) or free loc
    (Student's t). ``weights`` are multiplicities: a point of weight 3 counts
    as three repeated observations.

    Parameters
    ----------
    family : MarginalFamily or str
    samples : array_like, shape (n,)
    weights : array_like, optional
    start : MarginalSpec, optional
        Warm start, typically the previous fit of the same family.
    strict : bool
        If False, return the best parameters when the simplex hits its
        iteration cap instead of raising ``FitError``; the returned spec then
        has ``converged=False``.
    """
    family = MarginalFamily.parse(family)
    y = np.asarray(samples, dtype=float).ravel()
    w = as_weights(weights, y.size)
    keep = w > 0
    y, w = y[keep], w[keep]
    wsum = float(w.sum())
    if y.size == 0 or wsum < 3:
        raise InsufficientDataError("at least 3 observations are required")
    if not np.all(np.isfinite(y)):
        raise ValueError("samples must be finite")
    ymin, ymax = float(y.min()), float(y.max())
    if ymax - ymin <= 0.0:
        raise DegenerateDataError("all samples are identical")

    if family is MarginalFamily.GAUSSIAN:
        mean, var = _wmoments(y, w, wsum)
        return MarginalSpec(family, loc=mean, scale=math.sqrt(var))
    if family is MarginalFamily.LAPLACE:
        med = weighted_median(y, w)
        mad = np.dot(w, np.abs(y - med)) / wsum
        if mad <= 0.0:
            raise DegenerateDataError("zero mean absolute deviation")
        return MarginalSpec(family, loc=med, scale=mad)

    margin = 1e-9 * (ymax - ymin)
    mean, var = _wmoments(y, w, wsum)
    sd = math.sqrt(var)
    tr = _Free() if family is MarginalFamily.STUDENT_T else _Bounded(family, ymin, ymax, margin)
    floor = 1e-3 * sd

    def objective(eta):
        shapes, loc, scale = tr.unpack(eta)
        return _neg_loglik(family, shapes, loc, scale, y, w, wsum)

    candidates = []
    if start is not None:
        if MarginalFamily.parse(start.family) is not family:
            raise ValueError("start spec has a different family")
        candidates.append((start.shapes, start.loc, start.scale))
    candidates.extend(_starts(family, y, w, wsum, ymin, ymax, margin))
    etas = []
    for shapes, loc, scale in candidates:
        try:
            eta = tr.pack(shapes, loc, scale, floor)
        except (ValueError, OverflowError):
            continue
        if np.all(np.isfinite(eta)):
            etas.append(eta)
    if not etas:
        raise FitError(f"no feasible starting point for {family.value}")
    vals = [objective(e) for e in etas]
    eta0 = etas[int(np.argmin(vals))]

    dim = len(eta0)
    opts = {"xatol": 1e-7, "fatol": 1e-10, "maxiter": 300 * dim, "maxfev": 300 * dim}
    res = optimize.minimize(objective, eta0, method="Nelder-Mead", options=opts)
    if start is None and res.success:
        # one restart shakes the simplex out of premature collapse
        res = optimize.minimize(objective, res.x, method="Nelder-Mead", options=opts)
    shapes, loc, scale = tr.unpack(res.x)
    if not math.isfinite(res.fun):
        raise FitError(f"{family.value} likelihood is not finite at any explored point")
    spec = MarginalSpec(family, *(list(shapes) + [None] * (2 - len(shapes))), loc=loc, scale=scale)
    if not res.success:
        best = MarginalSpec(spec.family, spec.shape1, spec.shape2, spec.loc, spec.scale, converged=False)
        if strict:
            raise FitError(f"{family.value} MLE did not converge: {res.message}", best=best)
        return best
    return spec


def marginal_loglik(spec, samples, weights=None):
    y = np.asarray(samples, dtype=float).ravel()
    w = as_weights(weights, y.size)
    return float(np.dot(w, marginal_logpdf(spec, y)))
