# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops; see ``cbmm.kernels`` for the public entry points."""

import numpy as np

from libc.math cimport sqrt


def dominance_sweep(const long[::1] order, const double[::1] x,
                    const long[::1] yrank, const double[::1] w, long m):
    """Weighted count of points dominated by each point (ties inclusive).

    ``order`` sorts the points by x, ``yrank`` holds 1-based dense ranks of y.
    """
    cdef Py_ssize_t n = order.shape[0]
    cdef double[::1] tree = np.zeros(m + 1, dtype=np.float64)
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i = 0, j, t, p
    cdef long r
    cdef double s
    while i < n:
        j = i
        while j < n and x[order[j]] == x[order[i]]:
            j += 1
        for t in range(i, j):
            r = yrank[order[t]]
            while r <= m:
                tree[r] += w[order[t]]
                r += r & (-r)
        for t in range(i, j):
            p = order[t]
            r = yrank[p]
            s = 0.0
            while r > 0:
                s += tree[r]
                r -= r & (-r)
            out[p] = s
        i = j
    return out_arr


def cluster_distance_sums(const double[:, ::1] data, const long[::1] labels,
                          long n_clusters):
    """Sum of Euclidean distances from every point to every cluster."""
    cdef Py_ssize_t n = data.shape[0]
    out_arr = np.zeros((n, n_clusters), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double dx, dy, d
    for i in range(n):
        for j in range(i + 1, n):
            dx = data[i, 0] - data[j, 0]
            dy = data[i, 1] - data[j, 1]
            d = sqrt(dx * dx + dy * dy)
            out[i, labels[j]] += d
            out[j, labels[i]] += d
    return out_arr
