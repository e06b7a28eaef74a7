"""Small helpers shared across modules."""

import numpy as np

# Interior clip for probabilities fed to densities and quantiles.
PROB_EPS = 2.0 ** -53


def as_rng(rng):
    """Return a ``numpy.random.Generator`` for an int seed, a generator or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def scalar_or_array(value, like):
    """Unwrap 0-d results when the caller passed a scalar."""
    if np.ndim(like) == 0:
        return float(np.asarray(value).reshape(()))
    return value


def as_weights(weights, n):
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"weights must have shape ({n},), got {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    return w


def weighted_median(values, weights):
    order = np.argsort(values, kind="stable")
    v = values[order]
    cw = np.cumsum(weights[order])
    half = 0.5 * cw[-1]
    k = int(np.searchsorted(cw, half, side="left"))
    if np.isclose(cw[k], half, rtol=1e-12, atol=0.0) and k + 1 < len(v):
        return 0.5 * (v[k] + v[k + 1])
    return float(v[k])
