"""Hot loops behind the bivariate empirical CDF and the silhouette score.

The compiled extension ``cbmm._ckernels`` is used when it was built;
otherwise the pure-Python fallback in ``cbmm._pykernels`` is selected at
import. Set ``CBMM_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from cbmm import _pykernels

if os.environ.get("CBMM_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from cbmm import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _pykernels


def _backend(name):
    if name is None:
        return _impl
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    if name == "python":
        return _pykernels
    raise ValueError(f"unknown backend {name!r}")


def dominance_counts(x, y, weights=None, backend=None):
    """Weighted number of points ``j`` with ``x[j] <= x[i]`` and ``y[j] <= y[i]``.

    Runs in O(N log N) with a Fenwick tree swept along x.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    if weights is None:
        w = np.ones_like(x)
    else:
        w = np.ascontiguousarray(weights, dtype=np.float64)
        if w.shape != x.shape:
            raise ValueError("weights must match x")
    if x.size == 0:
        return np.zeros(0)
    order = np.lexsort((y, x)).astype(np.int_)
    uniq, inv = np.unique(y, return_inverse=True)
    yrank = np.ascontiguousarray(inv.ravel() + 1, dtype=np.int_)
    return _backend(backend).dominance_sweep(order, x, yrank, w, len(uniq))


def cluster_distance_sums(data, labels, n_clusters, backend=None):
    """(N, K) array of summed Euclidean distances from each point to each cluster."""
    data = np.ascontiguousarray(data, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int_)
    return _backend(backend).cluster_distance_sums(data, labels, int(n_clusters))
