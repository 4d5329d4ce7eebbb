"""Softmax over bias-free inner-product logits, and cosine softmax with an additive margin.

Both accept a single embedding ``x`` of shape (D,) with an integer label, or a
batch (N, D) with N labels; batched values are the mean over rows. Weights are
D x C with one class center per column.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import LossResult
from .numkit import ZeroNormError, unit_backward


@dataclass(frozen=True)
class ClassifyParams:
    margin: float = 0.3
    scale: float = 64.0

    def __post_init__(self):
        if not np.isfinite(self.margin) or self.margin < 0:
            raise ValueError(f"margin must be finite and >= 0, got {self.margin}")
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise ValueError(f"scale must be finite and > 0, got {self.scale}")


def _prepare(x, labels, W):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] < 2:
        raise ValueError(f"weights must be D x C with C >= 2, got shape {W.shape}")
    if X.shape[1] != W.shape[0]:
        raise ValueError(f"dimension mismatch: embeddings D={X.shape[1]}, weights D={W.shape[0]}")
    if y.shape != (X.shape[0],):
        raise ValueError("need exactly one label per embedding")
    C = W.shape[1]
    bad = (y < 0) | (y >= C)
    if np.any(bad):
        raise ValueError(f"label {int(y[bad][0])} out of range for C={C}")
    return X, y, W, single


def _cross_entropy(logits, y):
    """Mean -log softmax(logits)[y] and its gradient wrt the logits."""
    n = len(y)
    rows = np.arange(n)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    total = e.sum(axis=1)
    # -log p_y = (max - z_y) + log(e_y + others); log1p keeps tiny losses above 0
    mask = np.ones_like(e, dtype=bool)
    mask[rows, y] = False
    others = np.where(mask, e, 0.0).sum(axis=1)
    top_is_y = shifted[rows, y] == 0.0
    per_row = np.where(top_is_y, np.log1p(others), -shifted[rows, y] + np.log(total))
    value = float(np.mean(per_row))
    dlogits = e / total[:, None]
    dlogits[rows, y] -= 1.0
    return value, dlogits / n


def softmax_loss(x, label, W) -> LossResult:
    X, y, W, single = _prepare(x, label, W)
    value, dz = _cross_entropy(X @ W, y)
    grad = dz @ W.T
    return LossResult(value, grad[0] if single else grad, weight_grad=X.T @ dz)


def cosine_softmax_loss(x, label, W, params: ClassifyParams) -> LossResult:
    X, y, W, single = _prepare(x, label, W)
    xn = np.linalg.norm(X, axis=1)
    wn = np.linalg.norm(W, axis=0)
    if np.any(xn == 0):
        raise ZeroNormError("zero-norm embedding")
    if np.any(wn == 0):
        raise ZeroNormError(f"zero-norm weight column {int(np.flatnonzero(wn == 0)[0])}")
    Xu, Wu = X / xn[:, None], W / wn[None, :]
    cos = np.clip(Xu @ Wu, -1.0, 1.0)
    rows = np.arange(len(y))
    logits = params.scale * cos
    logits[rows, y] -= params.scale * params.margin
    value, dz = _cross_entropy(logits, y)
    dcos = params.scale * dz
    gx = unit_backward(Xu, xn, dcos @ Wu.T)
    gw = unit_backward(Wu.T, wn, dcos.T @ Xu).T
    return LossResult(value, gx[0] if single else gx, weight_grad=gw)
