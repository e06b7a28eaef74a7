"""Goodness-of-fit and clustering metrics.

Kolmogorov distances are evaluated only at the sample points. Label arrays
may use any integer alphabet; matching between predicted and true labels is
done on the confusion matrix.
"""

import itertools

import numpy as np
from scipy.optimize import linear_sum_assignment

from cbmm import kernels
from cbmm._utils import as_weights
from cbmm.exceptions import InsufficientDataError


def _points(data):
    x = np.asarray(data, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ValueError(f"expected an (N, 2) array, got shape {x.shape}")
    return x


def empirical_cdf_2d(data, x, weights=None):
    """Fraction of ``data`` with both coordinates <= ``x``.

    ``x`` may be a single point or an (M, 2) array of query points.
    """
    pts = _points(data)
    w = as_weights(weights, pts.shape[0])
    q = np.asarray(x, dtype=float)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    out = np.empty(q.shape[0])
    for start in range(0, q.shape[0], 512):
        block = q[start:start + 512]
        below = (pts[None, :, 0] <= block[:, None, 0]) & (pts[None, :, 1] <= block[:, None, 1])
        out[start:start + 512] = below @ w
    out /= w.sum()
    return float(out[0]) if single else out


def ecdf_at_samples(data, weights=None):
    """Weighted empirical joint CDF evaluated at each sample point, O(N log N)."""
    pts = _points(data)
    w = as_weights(weights, pts.shape[0])
    return kernels.dominance_counts(pts[:, 0], pts[:, 1], w) / w.sum()


def kolmogorov_distance_2d(data, model_cdf, weights=None):
    """sup over sample points of |empirical joint CDF - model CDF|.

    ``model_cdf`` is either the model CDF values at the points or a callable
    mapping the (N, 2) array to them.
    """
    pts = _points(data)
    vals = model_cdf(pts) if callable(model_cdf) else np.asarray(model_cdf, dtype=float)
    return float(np.max(np.abs(ecdf_at_samples(pts, weights) - vals)))


def ecdf_1d_at_samples(samples, weights=None):
    y = np.asarray(samples, dtype=float).ravel()
    w = as_weights(weights, y.size)
    uniq, inv = np.unique(y, return_inverse=True)
    cum = np.cumsum(np.bincount(inv.ravel(), weights=w, minlength=uniq.size))
    return cum[inv.ravel()] / cum[-1]


def kolmogorov_distance_1d(samples, model_cdf, weights=None):
    """sup over sample points of |empirical CDF - model CDF| for 1-D data."""
    y = np.asarray(samples, dtype=float).ravel()
    vals = model_cdf(y) if callable(model_cdf) else np.asarray(model_cdf, dtype=float)
    return float(np.max(np.abs(ecdf_1d_at_samples(y, weights) - vals)))


# ---------------------------------------------------------------------------
# label agreement


def confusion_matrix(predicted, truth):
    p = np.asarray(predicted).ravel()
    t = np.asarray(truth).ravel()
    if p.shape != t.shape:
        raise ValueError(f"label arrays differ in length: {p.size} vs {t.size}")
    p_alpha, p_idx = np.unique(p, return_inverse=True)
    t_alpha, t_idx = np.unique(t, return_inverse=True)
    cm = np.zeros((p_alpha.size, t_alpha.size), dtype=np.int64)
    np.add.at(cm, (p_idx.ravel(), t_idx.ravel()), 1)
    return cm


def _best_matching(cm):
    """Largest total agreement over one-to-one label matchings."""
    n_p, n_t = cm.shape
    k = max(n_p, n_t)
    if k <= 4:
        padded = np.zeros((k, k), dtype=cm.dtype)
        padded[:n_p, :n_t] = cm
        return max(padded[np.arange(k), list(perm)].sum() for perm in itertools.permutations(range(k)))
    rows, cols = linear_sum_assignment(cm, maximize=True)
    return cm[rows, cols].sum()


def error_ratio(predicted, truth):
    """Fraction of mismatched labels under the best label permutation."""
    cm = confusion_matrix(predicted, truth)
    n = cm.sum()
    if n == 0:
        raise ValueError("empty label arrays")
    return float(1.0 - _best_matching(cm) / n)


def accuracy(predicted, truth):
    return 1.0 - error_ratio(predicted, truth)


def silhouette_samples(data, labels):
    """Per-point silhouette with Euclidean distance; singletons score 0."""
    pts = _points(data)
    labels = np.asarray(labels).ravel()
    if labels.size != pts.shape[0]:
        raise ValueError("labels must match the number of points")
    alphabet, idx = np.unique(labels, return_inverse=True)
    idx = idx.ravel()
    k = alphabet.size
    if k < 2:
        raise InsufficientDataError("silhouette needs at least 2 clusters")
    if pts.shape[0] < k + 1:
        raise InsufficientDataError("silhouette needs at least K + 1 points")
    sums = kernels.cluster_distance_sums(pts, idx, k)
    sizes = np.bincount(idx, minlength=k).astype(float)
    n = pts.shape[0]
    own = sizes[idx]
    a = np.where(own > 1, sums[np.arange(n), idx] / np.maximum(own - 1.0, 1.0), 0.0)
    other = sums / sizes[None, :]
    other[np.arange(n), idx] = np.inf
    b = other.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    return np.where(own > 1, s, 0.0)


def mean_silhouette(data, labels):
    return float(np.mean(silhouette_samples(data, labels)))
