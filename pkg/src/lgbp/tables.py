"""Log-space potential tables shared by the ground and lifted engines.

Tabular potentials are numpy arrays of shape (2,)*k over an ordered atom
tuple, axis i = atom i, index 0 = false.  Counted potentials store one value
per true-count k of an exchangeable group (the value of any single assignment
with k true atoms).  Normalization conventions: a tabular potential sums to 1
in linear space; a counted one satisfies sum_k C(n,k) v(k) = 1.
"""
from __future__ import annotations

import math

import numpy as np

LOG_EPS = math.log(1e-300)


def logsumexp(a, axis=None):
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        s = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(s.reshape(()))
    return np.squeeze(s, axis=axis)


def log_binom(n: int) -> np.ndarray:
    """log C(n, k) for k = 0..n."""
    k = np.arange(n + 1, dtype=float)
    return (math.lgamma(n + 1)
            - np.array([math.lgamma(i + 1) for i in k])
            - np.array([math.lgamma(n - i + 1) for i in k]))


def normalize_table(values: np.ndarray) -> np.ndarray:
    out = values - logsumexp(values.reshape(-1), axis=0)
    return np.maximum(out, LOG_EPS)


def normalize_counted(values: np.ndarray) -> np.ndarray:
    n = values.size - 1
    out = values - logsumexp(values + log_binom(n), axis=0)
    return np.maximum(out, LOG_EPS)


def marginalize(values: np.ndarray, keep_axes: tuple[int, ...]) -> np.ndarray:
    drop = tuple(i for i in range(values.ndim) if i not in keep_axes)
    out = logsumexp(values, axis=drop) if drop else values
    order = np.argsort(np.argsort(keep_axes))
    return np.transpose(np.atleast_1d(out), axes=order) if len(keep_axes) > 1 else out


def expand_counted_values(values: np.ndarray) -> np.ndarray:
    """Symmetric tabular extension: entry with k true bits gets values[k]."""
    n = values.size - 1
    if n > 20:
        raise ValueError(f"group size {n} exceeds expansion cap 20")
    idx = np.arange(1 << n, dtype=np.uint64)
    pop = np.zeros(1 << n, dtype=np.int64)
    for b in range(n):
        pop += ((idx >> np.uint64(b)) & np.uint64(1)).astype(np.int64)
    flat = values[pop]
    return flat.reshape((2,) * n, order="F") if n else flat.reshape(())


def collapse_to_counted(table: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    """Inverse of expansion; raises when the table is not count-symmetric."""
    n = table.ndim
    flat = table.reshape(-1, order="F")
    idx = np.arange(flat.size, dtype=np.uint64)
    pop = np.zeros(flat.size, dtype=np.int64)
    for b in range(n):
        pop += ((idx >> np.uint64(b)) & np.uint64(1)).astype(np.int64)
    values = np.empty(n + 1)
    for k in range(n + 1):
        vals = flat[pop == k]
        if np.ptp(vals) > atol:
            raise ValueError("table is not symmetric in true-counts")
        values[k] = vals[0]
    return values


def damp_log(new_log: np.ndarray, old_log: np.ndarray, damping: float) -> np.ndarray:
    """Geometric interpolation in log space."""
    return damping * old_log + (1.0 - damping) * new_log
