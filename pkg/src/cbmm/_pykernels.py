"""Pure-Python/numpy versions of the compiled kernels in ``_ckernels.pyx``."""

import numpy as np


def dominance_sweep(order, x, yrank, w, m):
    n = len(order)
    tree = [0.0] * (m + 1)
    out = np.empty(n, dtype=np.float64)
    order = order.tolist()
    xs = x.tolist()
    yr = yrank.tolist()
    ws = w.tolist()
    i = 0
    while i < n:
        xi = xs[order[i]]
        j = i
        while j < n and xs[order[j]] == xi:
            j += 1
        for t in range(i, j):
            p = order[t]
            r = yr[p]
            wp = ws[p]
            while r <= m:
                tree[r] += wp
                r += r & (-r)
        for t in range(i, j):
            p = order[t]
            r = yr[p]
            s = 0.0
            while r > 0:
                s += tree[r]
                r -= r & (-r)
            out[p] = s
        i = j
    return out


def cluster_distance_sums(data, labels, n_clusters, chunk=1024):
    n = data.shape[0]
    onehot = np.zeros((n, n_clusters))
    onehot[np.arange(n), labels] = 1.0
    out = np.empty((n, n_clusters))
    for start in range(0, n, chunk):
        block = data[start:start + chunk]
        dist = np.sqrt(((block[:, None, :] - data[None, :, :]) ** 2).sum(-1))
        out[start:start + chunk] = dist @ onehot
    return out
