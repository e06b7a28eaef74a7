"""K-Means, EM for bivariate Gaussian mixtures, BIC and BIC-vote K selection.

These serve both as comparison methods and as GICE initializers.
"""

from collections import Counter
from dataclasses import dataclass
import json
import logging
import math

import numpy as np
from scipy.special import logsumexp

from cbmm._utils import as_rng
from cbmm.copulas import CopulaFamily, CopulaSpec
from cbmm.exceptions import InsufficientDataError, ParameterDomainError
from cbmm.marginals import MarginalFamily, MarginalSpec
from cbmm.mixture import Cbmm, Component, log_likelihood

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GmmModel:
    """Bivariate Gaussian mixture with full covariances."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    regularized: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        cov = np.asarray(self.covs, dtype=float)
        k = w.size
        if mu.shape != (k, 2) or cov.shape != (k, 2, 2):
            raise ParameterDomainError("means must be (K, 2) and covs (K, 2, 2)")
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w <= 0):
            raise ParameterDomainError("weights must be positive and sum to 1")
        if not np.allclose(cov, np.swapaxes(cov, 1, 2)):
            raise ParameterDomainError("covariances must be symmetric")
        for c in cov:
            np.linalg.cholesky(c)  # raises LinAlgError unless SPD
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", cov)

    @property
    def K(self):
        return self.weights.size

    @property
    def n_params(self):
        # weights K-1, means 2 and full covariance 3 per component
        return self.K - 1 + 5 * self.K

    def to_dict(self):
        return {
            "components": [
                {"weight": float(w), "mean": m.tolist(), "cov": c.tolist()}
                for w, m, c in zip(self.weights, self.means, self.covs)
            ]
        }

    @classmethod
    def from_dict(cls, d):
        comps = d["components"]
        return cls(
            np.array([c["weight"] for c in comps]),
            np.array([c["mean"] for c in comps]),
            np.array([c["cov"] for c in comps]),
        )

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def gmm_log_components(model, data):
    """(N, K) array of log(pi_k) + log N(x_n | mu_k, Sigma_k)."""
    x = np.asarray(data, dtype=float)
    out = np.empty((x.shape[0], model.K))
    for k in range(model.K):
        chol = np.linalg.cholesky(model.covs[k])
        diff = np.linalg.solve(chol, (x - model.means[k]).T)
        maha = np.sum(diff * diff, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, k] = math.log(model.weights[k]) - 0.5 * (maha + logdet) - _LOG_2PI
    return out


def gmm_density(model, data):
    return np.exp(logsumexp(gmm_log_components(model, data), axis=1))


def gmm_log_likelihood(model, data):
    return float(np.sum(logsumexp(gmm_log_components(model, data), axis=1)))


def gmm_predict(model, data):
    return np.argmax(gmm_log_components(model, data), axis=1)


def gmm_to_cbmm(model):
    """Gaussian marginals plus Gaussian copulas with alpha = correlation."""
    comps = []
    for w, mu, cov in zip(model.weights, model.means, model.covs):
        s1, s2 = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
        rho = float(np.clip(cov[0, 1] / (s1 * s2), -0.999, 0.999))
        comps.append(
            Component(
                float(w),
                (
                    MarginalSpec(MarginalFamily.GAUSSIAN, loc=float(mu[0]), scale=s1),
                    MarginalSpec(MarginalFamily.GAUSSIAN, loc=float(mu[1]), scale=s2),
                ),
                CopulaSpec(CopulaFamily.GAUSSIAN, rho),
            )
        )
    return Cbmm(tuple(comps))


# ---------------------------------------------------------------------------
# K-Means


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia_trace: list
    n_iter: int


def _kmeanspp(x, k, rng):
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def kmeans(data, K, seed=None, max_iter=300):
    """Lloyd's algorithm with k-means++ seeding.

    Stops at an assignment fixpoint or after ``max_iter`` iterations. An empty
    cluster is re-seeded at the point farthest from its current centroid.
    """
    x = np.asarray(data, dtype=float)
    n = x.shape[0]
    if n < K:
        raise InsufficientDataError(f"need at least K={K} points, got {n}")
    rng = as_rng(seed)
    centers = _kmeanspp(x, K, rng)
    labels = None
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new = np.argmin(d2, axis=1)
        for k in range(K):
            if not np.any(new == k):
                far = int(np.argmax(d2[np.arange(n), new]))
                new[far] = k
        trace.append(float(np.sum(d2[np.arange(n), new])))
        centers = np.array([x[new == k].mean(axis=0) for k in range(K)])
        if labels is not None and np.array_equal(new, labels):
            labels = new
            break
        labels = new
    inertia = float(np.sum((x - centers[labels]) ** 2))
    trace.append(inertia)
    return KMeansResult(labels, centers, trace, it)


# ---------------------------------------------------------------------------
# EM


def _m_step(x, resp):
    nk = resp.sum(axis=0)
    weights = nk / nk.sum()
    means = (resp.T @ x) / nk[:, None]
    covs = np.empty((resp.shape[1], 2, 2))
    regularized = False
    for k in range(resp.shape[1]):
        diff = x - means[k]
        cov = (resp[:, k, None] * diff).T @ diff / nk[k]
        cov = 0.5 * (cov + cov.T)
        try:
            np.linalg.cholesky(cov)
            if np.linalg.cond(cov) > 1e12:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            cov = cov + np.eye(2) * 1e-6 * max(np.trace(cov), 1e-12) / 2.0
            regularized = True
        covs[k] = cov
    return weights, means, covs, regularized


def gmm_em_fit(data, K, seed=None, iter_max=100, tol=1e-8):
    """EM for a bivariate GMM, initialized from K-Means hard labels.

    Returns ``(model, loglik_trace)`` where the trace holds the log-likelihood
    of each successive parameter set. Iteration stops after ``iter_max`` EM
    steps or once the relative improvement falls below ``tol``.
    """
    x = np.asarray(data, dtype=float)
    n = x.shape[0]
    if n < 3 * K:
        raise InsufficientDataError(f"need at least 3K={3 * K} points, got {n}")
    km = kmeans(x, K, seed=seed)
    resp = np.zeros((n, K))
    resp[np.arange(n), km.labels] = 1.0
    w, mu, cov, reg_any = _m_step(x, resp)
    model = GmmModel(w, mu, cov)
    trace = [gmm_log_likelihood(model, x)]
    for _ in range(iter_max):
        lc = gmm_log_components(model, x)
        resp = np.exp(lc - logsumexp(lc, axis=1, keepdims=True))
        w, mu, cov, reg = _m_step(x, resp)
        reg_any |= reg
        model = GmmModel(w, mu, cov)
        trace.append(gmm_log_likelihood(model, x))
        if abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
            break
    if reg_any:
        log.info("GMM-EM added a ridge to a near-singular covariance")
        model = GmmModel(model.weights, model.means, model.covs, regularized=True)
    return model, trace


# ---------------------------------------------------------------------------
# model selection


def n_free_params(model):
    return model.n_params


def bic(model, data):
    """-2 lnL + p ln N for a GmmModel or a Cbmm."""
    x = np.asarray(data, dtype=float)
    if isinstance(model, GmmModel):
        ll = gmm_log_likelihood(model, x)
    else:
        ll = log_likelihood(model, x)
    return bic_value(ll, model.n_params, x.shape[0])


def bic_value(loglik, n_params, n):
    return -2.0 * loglik + n_params * math.log(n)


def select_k_bic(data, K_range, runs=12, seed=None, iter_max=100):
    """Most frequent BIC-optimal K over repeated GMM-EM runs (ties -> smaller K).

    Each run uses its own seed spawned from ``seed`` so that the K-Means
    initializations differ across runs.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    x = np.asarray(data, dtype=float)
    ks = sorted(int(k) for k in K_range)
    seeds = np.random.SeedSequence(seed).spawn(runs)
    votes = Counter()
    for ss in seeds:
        scores = {}
        for k in ks:
            if x.shape[0] < 3 * k:
                continue
            model, _ = gmm_em_fit(x, k, seed=np.random.default_rng(ss.spawn(1)[0]), iter_max=iter_max)
            scores[k] = bic(model, x)
        votes[min(scores, key=lambda k: (scores[k], k))] += 1
    top = max(votes.values())
    return min(k for k, v in votes.items() if v == top)
