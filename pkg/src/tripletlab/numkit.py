"""Distances, similarities and stable exponential reductions shared by the loss kernels.

Everything here works in float64. Zero-norm inputs to anything cosine-based raise
``ZeroNormError`` instead of being mapped to zero.
"""
from __future__ import annotations

import numpy as np


class ZeroNormError(ValueError):
    pass


def as_embedding(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"embedding must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("embedding contains non-finite values")
    return arr


def _pair(x, y):
    x, y = as_embedding(x), as_embedding(y)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.size} vs {y.size}")
    return x, y


def euclidean_distance(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.sqrt(np.sum((x - y) ** 2)))


def cosine_similarity(x, y) -> float:
    x, y = _pair(x, y)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ZeroNormError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


def l2_normalize(x) -> np.ndarray:
    x = as_embedding(x)
    n = np.linalg.norm(x)
    if n == 0:
        raise ZeroNormError("cannot normalize a zero-norm vector")
    return x / n


def stable_log1p_sumexp(terms) -> float:
    """log(1 + sum(exp(t))) with a max shift; an empty sequence gives 0."""
    t = np.asarray(terms, dtype=np.float64).ravel()
    if t.size == 0:
        return 0.0
    if not np.all(np.isfinite(t)):
        raise ValueError("non-finite term")
    shift = max(0.0, float(t.max()))
    return shift + float(np.log(np.exp(-shift) + np.sum(np.exp(t - shift))))


# Row-wise helpers used by the batched kernels.

def pairwise_euclidean(X: np.ndarray, Y: np.ndarray | None = None) -> np.ndarray:
    Y = X if Y is None else Y
    diff = X[:, None, :] - Y[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def row_norms(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        raise ZeroNormError(f"zero-norm row at index {int(np.flatnonzero(norms == 0)[0])}")
    return norms


def normalize_rows(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = row_norms(X)
    return X / norms[:, None], norms


def euclidean_backward(X: np.ndarray, dist: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """Gradient wrt X of sum_ab coef[a, b] * dist[a, b].

    Pairs at distance zero get zero subgradient.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(dist > 0, coef / dist, 0.0)
    h = h + h.T
    return h.sum(axis=1)[:, None] * X - h @ X


def cosine_backward(Xn: np.ndarray, norms: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """Gradient wrt the raw rows of sum_ab coef[a, b] * cos(x_a, x_b)."""
    g_unit = (coef + coef.T) @ Xn
    return unit_backward(Xn, norms, g_unit)


def unit_backward(Xn: np.ndarray, norms: np.ndarray, g_unit: np.ndarray) -> np.ndarray:
    """Pull a gradient on x/|x| back to x."""
    radial = np.sum(g_unit * Xn, axis=1, keepdims=True)
    return (g_unit - radial * Xn) / norms[:, None]


def logsumexp(v: np.ndarray) -> tuple[float, np.ndarray]:
    """Return (log sum exp v, softmax weights)."""
    top = float(v.max())
    e = np.exp(v - top)
    total = e.sum()
    return top + float(np.log(total)), e / total
