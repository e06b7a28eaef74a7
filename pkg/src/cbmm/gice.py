"""Generalized Iterative Conditional Estimation (GICE) for copula-based mixtures.

Each iteration draws ``T`` label realizations from the current posteriors,
fuses the points assigned to each component across realizations, and then for
every component re-estimates its coefficient, picks the marginal form of each
dimension and the copula form by minimal Kolmogorov distance, and re-fits
their parameters.

Fused subgroups are multisets. They are stored as the unique data points plus
integer multiplicities, which gives exactly the same likelihood sums, ranks and
empirical CDFs as literal repetition while keeping the cost independent of T.
"""

from dataclasses import dataclass, field
import csv
import io
import logging
import math

import numpy as np
from scipy.special import logsumexp

from cbmm import kernels
from cbmm._utils import PROB_EPS
from cbmm.baselines import gmm_em_fit, gmm_to_cbmm, kmeans
from cbmm.copulas import (
    ALL_COPULAS,
    CopulaFamily,
    CopulaSpec,
    copula_cdf,
    copula_fit_pml,
    pseudo_observations,
)
from cbmm.exceptions import (
    CbmmError,
    CollapseError,
    InsufficientDataError,
    SelectionError,
)
from cbmm.marginals import ALL_MARGINALS, MarginalFamily, MarginalSpec, marginal_cdf, marginal_fit_mle
from cbmm.metrics import ecdf_1d_at_samples, error_ratio, kolmogorov_distance_2d
from cbmm.mixture import Cbmm, Component, mixture_cdf, posterior, weighted_log_densities

log = logging.getLogger(__name__)

INIT_METHODS = ("kmeans", "gmm")


@dataclass(frozen=True)
class GiceConfig:
    """Inputs of a GICE run.

    ``init`` is ``"kmeans"``, ``"gmm"`` or a :class:`Cbmm` used as Θ⁰.
    With ``early_stop`` the run ends once the selected forms are unchanged and
    no parameter moves by more than ``early_stop_tol`` for
    ``early_stop_window`` consecutive iterations. ``pseudo`` chooses rank-based
    pseudo-observations ("empirical", the PML estimator) or CDFs of the fitted
    marginals ("parametric", the IFM estimator) for the copula step.
    """

    K: int
    T: int = 10
    iter_max: int = 100
    marginal_candidates: tuple = ALL_MARGINALS
    copula_candidates: tuple = ALL_COPULAS
    init: object = "gmm"
    seed: object = None
    min_subgroup: int = 20
    early_stop: bool = False
    early_stop_tol: float = 1e-4
    early_stop_window: int = 5
    pseudo: str = "empirical"

    def __post_init__(self):
        for name in ("K", "T", "iter_max", "min_subgroup"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        margs = tuple(MarginalFamily.parse(f) for f in self.marginal_candidates)
        cops = tuple(CopulaFamily.parse(f) for f in self.copula_candidates)
        if not margs or not cops:
            raise ValueError("candidate lists must be non-empty")
        object.__setattr__(self, "marginal_candidates", margs)
        object.__setattr__(self, "copula_candidates", cops)
        if self.pseudo not in ("empirical", "parametric"):
            raise ValueError(f"pseudo must be 'empirical' or 'parametric', got {self.pseudo!r}")
        if isinstance(self.init, Cbmm):
            if self.init.K != self.K:
                raise ValueError(f"provided initial model has K={self.init.K}, config has K={self.K}")
        elif str(self.init).lower() in ("kmeans", "k-means"):
            object.__setattr__(self, "init", "kmeans")
        elif str(self.init).lower() in ("gmm", "gmm-em", "gmmem", "em"):
            object.__setattr__(self, "init", "gmm")
        else:
            raise ValueError(f"init must be 'kmeans', 'gmm' or a Cbmm, got {self.init!r}")


@dataclass
class IterationRecord:
    iteration: int
    model: Cbmm
    kolmogorov: float
    error_ratio: float | None = None
    reseeded: tuple = ()
    orphans: int = 0
    failures: tuple = ()


@dataclass
class FitTrace:
    """Per-iteration history. Record 0 is the initial model Θ⁰."""

    records: list = field(default_factory=list)
    best_iteration: int | None = None
    stopped_early: bool = False

    def __len__(self):
        return len(self.records)

    @property
    def kolmogorov(self):
        return np.array([r.kolmogorov for r in self.records])

    @property
    def error_ratios(self):
        return np.array([np.nan if r.error_ratio is None else r.error_ratio for r in self.records])

    @property
    def n_iterations(self):
        """Iterations run after initialization."""
        return max(len(self.records) - 1, 0)

    CSV_COLUMNS = (
        "iteration", "component", "dimension", "selected_family", "shape1", "shape2",
        "loc", "scale", "alpha", "weight", "kolmogorov", "error_ratio",
    )

    def rows(self):
        """One row per (iteration, component, marginal dimension or copula)."""
        for rec in self.records:
            er = "" if rec.error_ratio is None else rec.error_ratio
            for k, comp in enumerate(rec.model.components, start=1):
                for d, m in enumerate(comp.marginals, start=1):
                    yield (rec.iteration, k, d, m.family.value,
                           _blank(m.shape1), _blank(m.shape2), m.loc, m.scale, "",
                           comp.weight, rec.kolmogorov, er)
                c = comp.copula
                yield (rec.iteration, k, "copula", c.family.value, "", "", "", "",
                       _blank(c.alpha), comp.weight, rec.kolmogorov, er)

    def to_csv(self, path=None):
        """Write the trace as CSV to ``path``; returns the text when ``path`` is None."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_COLUMNS)
        for row in self.rows():
            writer.writerow([_fmt(v) for v in row])
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return None


def _blank(v):
    return "" if v is None else v


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


# ---------------------------------------------------------------------------
# stochastic labelling and subgroups


def _draw(post, T, rng):
    cum = np.cumsum(post, axis=1)
    cum[:, -1] = 1.0
    u = rng.random((T, post.shape[0]))
    labels = np.empty((T, post.shape[0]), dtype=np.int64)
    for t in range(T):
        labels[t] = np.minimum((u[t][:, None] >= cum).sum(axis=1), post.shape[1] - 1)
    return labels


def simulate_labels(model, data, T, rng):
    """T independent categorical draws per point from the posterior.

    Returns an integer array of shape (T, N) with 0-based labels.
    Raises UndefinedPosteriorError if some point has zero mixture density.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    return _draw(posterior(model, data), int(T), rng)


def _robust_posterior(model, data):
    """Posterior with zero-density points falling back to the mixture weights."""
    lw = weighted_log_densities(model, data)
    total = logsumexp(lw, axis=1)
    bad = ~np.isfinite(total)
    post = np.empty_like(lw)
    ok = ~bad
    post[ok] = np.exp(lw[ok] - total[ok, None])
    post[bad] = model.weights
    post /= post.sum(axis=1, keepdims=True)
    return post, int(bad.sum())


def subgroup_counts(realizations, k):
    """Multiplicity of each data point in the fused subgroup of component ``k``."""
    z = np.asarray(realizations)
    return np.sum(z == k, axis=0)


def gather_subgroup(data, realizations, k):
    """Fused multiset {x_n : z_n^t = k} over all realizations, as repeated rows."""
    x = np.asarray(data, dtype=float)
    counts = subgroup_counts(realizations, k)
    return np.repeat(x, counts, axis=0)


def update_weight(realizations, k):
    """Share of all N*T simulated labels equal to ``k``."""
    z = np.asarray(realizations)
    return float(np.count_nonzero(z == k) / z.size)


# ---------------------------------------------------------------------------
# form selection


@dataclass(frozen=True)
class Candidate:
    family: object
    spec: object
    distance: float
    error: str | None = None


def rank_marginals(samples, candidates=ALL_MARGINALS, weights=None, starts=None):
    """Fit every candidate family and score it by 1-D Kolmogorov distance.

    Returns a list of :class:`Candidate` in candidate order; failed fits carry
    ``spec=None``, ``distance=inf`` and the error message.
    """
    y = np.asarray(samples, dtype=float).ravel()
    ecdf = ecdf_1d_at_samples(y, weights)
    starts = starts or {}
    out = []
    for fam in candidates:
        fam = MarginalFamily.parse(fam)
        try:
            spec = marginal_fit_mle(fam, y, weights, start=starts.get(fam), strict=False)
            dist = float(np.max(np.abs(ecdf - marginal_cdf(spec, y))))
            out.append(Candidate(fam, spec, dist))
        except (CbmmError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            if starts.get(fam) is not None:
                # a stale warm start must not disqualify the family
                try:
                    spec = marginal_fit_mle(fam, y, weights, strict=False)
                    dist = float(np.max(np.abs(ecdf - marginal_cdf(spec, y))))
                    out.append(Candidate(fam, spec, dist))
                    continue
                except (CbmmError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc2:
                    exc = exc2
            out.append(Candidate(fam, None, math.inf, f"{type(exc).__name__}: {exc}"))
    return out


def _pick(ranked, what):
    ok = [c for c in ranked if c.spec is not None and math.isfinite(c.distance)]
    if not ok:
        raise SelectionError(
            f"every {what} candidate failed", causes={c.family.value: c.error for c in ranked}
        )
    return min(ok, key=lambda c: c.distance)


def select_marginal(samples, candidates=ALL_MARGINALS, weights=None, starts=None):
    """Fitted marginal with the smallest Kolmogorov distance to the samples."""
    return _pick(rank_marginals(samples, candidates, weights, starts), "marginal").spec


def empirical_copula_at_samples(pseudo, weights=None):
    u = np.asarray(pseudo, dtype=float)
    w = np.ones(u.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    return kernels.dominance_counts(u[:, 0], u[:, 1], w) / w.sum()


def parametric_pseudo(samples, marginals):
    """Pseudo-observations through fitted marginal CDFs (the IFM variant)."""
    x = np.asarray(samples, dtype=float)
    u = np.column_stack([marginal_cdf(m, x[:, d]) for d, m in enumerate(marginals)])
    return np.clip(u, PROB_EPS, 1.0 - PROB_EPS)


def rank_copulas(samples, candidates=ALL_COPULAS, weights=None, marginals=None):
    """PML-fit every candidate copula and score it by bivariate Kolmogorov distance.

    The distance compares the empirical copula of the pseudo-observations with
    the fitted copula CDF at the pseudo-observations themselves. Pseudo
    observations are rescaled midranks unless fitted ``marginals`` are given,
    in which case their CDFs are used instead.
    """
    if marginals is None:
        u = pseudo_observations(samples, weights)
    else:
        u = parametric_pseudo(samples, marginals)
    emp = empirical_copula_at_samples(u, weights)
    out = []
    for fam in candidates:
        fam = CopulaFamily.parse(fam)
        try:
            spec = copula_fit_pml(fam, u, weights)
        except CbmmError as exc:
            best = getattr(exc, "best", None)
            if best is None:
                out.append(Candidate(fam, None, math.inf, f"{type(exc).__name__}: {exc}"))
                continue
            spec = best
        dist = float(np.max(np.abs(emp - copula_cdf(spec, u[:, 0], u[:, 1]))))
        out.append(Candidate(fam, spec, dist))
    return out


def select_copula(samples, candidates=ALL_COPULAS, weights=None, marginals=None):
    """Fitted copula with the smallest Kolmogorov distance to the empirical copula."""
    return _pick(rank_copulas(samples, candidates, weights, marginals), "copula").spec


def convergence_index(model, data):
    """sup over the sample points of |empirical joint CDF - mixture CDF|."""
    x = np.asarray(data, dtype=float)
    if x.shape[0] < 2:
        raise InsufficientDataError("the convergence index needs at least 2 points")
    return kolmogorov_distance_2d(x, mixture_cdf(model, x))


# ---------------------------------------------------------------------------
# main loop


def _estimate_component(x, counts, config, previous, starts, k):
    """Steps 'select marginals, select copula' for one component."""
    keep = counts > 0
    pts, w = x[keep], counts[keep].astype(float)
    failures = []
    margs = []
    for d in range(2):
        ranked = rank_marginals(
            pts[:, d], config.marginal_candidates, w,
            {f: starts.get((k, d, f)) for f in config.marginal_candidates},
        )
        for c in ranked:
            if c.spec is not None:
                starts[(k, d, c.family)] = c.spec
        try:
            margs.append(_pick(ranked, "marginal").spec)
        except SelectionError as exc:
            if previous is None:
                raise
            failures.append(f"component {k + 1} dimension {d + 1}: {exc}")
            margs.append(previous.marginals[d])
    try:
        fitted = tuple(margs) if config.pseudo == "parametric" else None
        cop = _pick(rank_copulas(pts, config.copula_candidates, w, fitted), "copula").spec
    except (SelectionError, InsufficientDataError) as exc:
        if previous is None:
            raise
        failures.append(f"component {k + 1} copula: {exc}")
        cop = previous.copula
    return tuple(margs), cop, failures


def _estimate(x, labels, config, previous, starts):
    """One pass of coefficient update and form/parameter selection for all components."""
    comps, failures = [], []
    for k in range(config.K):
        counts = subgroup_counts(labels, k)
        prev = None if previous is None else previous.components[k]
        margs, cop, fails = _estimate_component(x, counts, config, prev, starts, k)
        failures.extend(fails)
        comps.append(Component(update_weight(labels, k), margs, cop))
    return Cbmm(tuple(comps)), failures


def _reseed(x, model, labels, config):
    """Hand the lowest-density points to every starved component, in place."""
    reseeded = []
    for _ in range(config.K):
        sizes = np.array([np.count_nonzero(labels == k) for k in range(config.K)])
        starved = np.flatnonzero(sizes < config.min_subgroup)
        if starved.size == 0:
            break
        k = int(starved[0])
        dens = logsumexp(weighted_log_densities(model, x), axis=1)
        dens[np.any(labels == k, axis=0)] = np.inf  # points already in k are not moved
        take = np.argsort(dens, kind="stable")[: config.min_subgroup]
        labels[:, take] = k
        reseeded.append(k)
    return tuple(sorted(set(reseeded)))


def _param_vector(model):
    out = []
    for c in model.components:
        out.append(c.weight)
        for m in c.marginals:
            out.extend(m.params)
        if c.copula.alpha is not None:
            out.append(c.copula.alpha)
    return np.array(out)


def _forms(model):
    return tuple(
        (c.marginals[0].family, c.marginals[1].family, c.copula.family) for c in model.components
    )


def _initial_model(x, config, init_seed, starts):
    if isinstance(config.init, Cbmm):
        return config.init
    if config.init == "gmm":
        gmm, _ = gmm_em_fit(x, config.K, seed=init_seed, iter_max=100)
        return gmm_to_cbmm(gmm)
    km = kmeans(x, config.K, seed=init_seed)
    labels = km.labels[None, :].copy()
    # a tiny K-Means cluster gets the same re-seeding as in the main loop
    placeholder = Cbmm(tuple(
        Component(1.0 / config.K, _gaussian_margs(x), _independence()) for _ in range(config.K)
    ))
    _reseed(x, placeholder, labels, config)
    model, _ = _estimate(x, labels, config, None, starts)
    return model


def _gaussian_margs(x):
    return tuple(
        MarginalSpec(MarginalFamily.GAUSSIAN, loc=float(x[:, d].mean()), scale=float(x[:, d].std()) or 1.0)
        for d in range(2)
    )


def _independence():
    return CopulaSpec(CopulaFamily.PRODUCT)


def gice_fit(data, config, true_labels=None):
    """Identify a K-component CBMM from unlabeled 2-D data.

    Parameters
    ----------
    data : array_like, shape (N, 2)
    config : GiceConfig
    true_labels : array_like, optional
        Used only to trace the error ratio of the MAP labelling.

    Returns
    -------
    model : Cbmm
        The iterate with the smallest convergence index among iterations
        1..iter_max (earliest on ties).
    trace : FitTrace

    Raises
    ------
    CollapseError
        When a component needs re-seeding in 3 consecutive iterations. The
        exception carries the partial trace.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ValueError(f"data must have shape (N, 2), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("data must be finite")
    n = x.shape[0]
    if n < config.K * config.min_subgroup:
        raise InsufficientDataError(
            f"need at least K*min_subgroup={config.K * config.min_subgroup} points, got {n}"
        )
    truth = None if true_labels is None else np.asarray(true_labels).ravel()
    if truth is not None and truth.size != n:
        raise ValueError("true_labels must have one entry per point")

    init_ss, label_ss = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(label_ss)
    starts = {}

    def record(i, model, **extra):
        ks = convergence_index(model, x)
        er = None
        if truth is not None:
            post, _ = _robust_posterior(model, x)
            er = error_ratio(np.argmax(post, axis=1), truth)
        return IterationRecord(i, model, ks, er, **extra)

    model = _initial_model(x, config, np.random.default_rng(init_ss), starts)
    trace = FitTrace([record(0, model)])
    streak = np.zeros(config.K, dtype=int)
    stable = 0

    for i in range(1, config.iter_max + 1):
        post, orphans = _robust_posterior(model, x)
        if orphans:
            log.debug("iteration %d: %d points outside every component support", i, orphans)
        labels = _draw(post, config.T, rng)
        reseeded = _reseed(x, model, labels, config)
        streak = np.where(np.isin(np.arange(config.K), reseeded), streak + 1, 0)
        if np.any(streak >= 3):
            k = int(np.flatnonzero(streak >= 3)[0])
            _finalize(trace)
            raise CollapseError(
                f"component {k + 1} fell below {config.min_subgroup} points in 3 consecutive iterations",
                trace=trace,
                component=k,
            )
        new, failures = _estimate(x, labels, config, model, starts)
        trace.records.append(
            record(i, new, reseeded=reseeded, orphans=orphans, failures=tuple(failures))
        )
        if config.early_stop:
            same = _forms(new) == _forms(model)
            move = np.max(np.abs(_param_vector(new) - _param_vector(model))) if same else np.inf
            stable = stable + 1 if move < config.early_stop_tol else 0
        model = new
        if config.early_stop and stable >= config.early_stop_window:
            trace.stopped_early = True
            break

    _finalize(trace)
    return trace.records[trace.best_iteration].model, trace


def _finalize(trace):
    later = trace.records[1:] or trace.records
    best = min(later, key=lambda r: (r.kolmogorov, r.iteration))
    trace.best_iteration = best.iteration
