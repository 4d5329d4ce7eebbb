"""Sample-level triplet losses: batch hard, cross-modality batch hard, batch all and
unified batch all, plus a diagnostic for modality imbalance in hard mining.

Mining ties go to the lowest canonical batch row. A hinge sitting exactly at 0
is inactive.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .batch import MiniBatch
from .losses import LossResult, TripletParams
from .numkit import (cosine_backward, euclidean_backward, logsumexp, normalize_rows,
                     pairwise_euclidean, stable_log1p_sumexp)

_REDUCTIONS = ("sum", "mean")


def _masks(batch: MiniBatch):
    ids, mods = batch.identities, batch.modalities
    same = ids[:, None] == ids[None, :]
    pos = same & ~np.eye(len(ids), dtype=bool)
    neg = ~same
    cross = mods[:, None] != mods[None, :]
    return pos, neg, cross


def _check_negatives(batch: MiniBatch):
    if len(np.unique(batch.identities)) < 2:
        raise ValueError("batch needs at least two identities (P >= 2)")


def hard_mine(dist: np.ndarray, pos: np.ndarray, neg: np.ndarray):
    """Per-anchor furthest positive and closest negative column indices.

    ``np.argmax``/``np.argmin`` return the first extreme, which is the
    lowest-index tie rule.
    """
    p_star = np.argmax(np.where(pos, dist, -np.inf), axis=1)
    n_star = np.argmin(np.where(neg, dist, np.inf), axis=1)
    return p_star, n_star


def _hard_hinge(X, dist, pos, neg, margin):
    rows = np.arange(len(X))
    p_star, n_star = hard_mine(dist, pos, neg)
    arg = margin + dist[rows, p_star] - dist[rows, n_star]
    active = arg > 0
    coef = np.zeros_like(dist)
    np.add.at(coef, (rows[active], p_star[active]), 1.0)
    np.add.at(coef, (rows[active], n_star[active]), -1.0)
    return np.where(active, arg, 0.0), coef


def _reduce(batch, hinge, coef, reduction):
    if reduction not in _REDUCTIONS:
        raise ValueError(f"reduction must be one of {_REDUCTIONS}")
    scale = 1.0 / batch.spec.size if reduction == "mean" else 1.0
    return float(hinge.sum() * scale), coef * scale


def batch_hard_loss(batch: MiniBatch, params: TripletParams, reduction: str = "sum") -> LossResult:
    """Sum over anchors of [m + furthest positive - closest negative]_+ (Euclidean)."""
    _check_negatives(batch)
    X = batch.embeddings
    dist = pairwise_euclidean(X)
    pos, neg, _ = _masks(batch)
    hinge, coef = _hard_hinge(X, dist, pos, neg, params.margin)
    value, coef = _reduce(batch, hinge, coef, reduction)
    return LossResult(value, euclidean_backward(X, dist, coef))


def cross_modality_batch_hard_loss(batch: MiniBatch, params: TripletParams,
                                   reduction: str = "sum") -> LossResult:
    """Batch hard plus, for every anchor, the hardest triplet drawn from the other modality."""
    _check_negatives(batch)
    X = batch.embeddings
    dist = pairwise_euclidean(X)
    pos, neg, cross = _masks(batch)
    hinge_g, coef_g = _hard_hinge(X, dist, pos, neg, params.margin)
    hinge_c, coef_c = _hard_hinge(X, dist, pos & cross, neg & cross, params.margin)
    value, coef = _reduce(batch, hinge_g + hinge_c, coef_g + coef_c, reduction)
    return LossResult(value, euclidean_backward(X, dist, coef))


def batch_all_loss(batch: MiniBatch, params: TripletParams) -> LossResult:
    """Mean over anchors of the hinge summed over every (positive, negative) pair."""
    _check_negatives(batch)
    X = batch.embeddings
    dist = pairwise_euclidean(X)
    pos, neg, _ = _masks(batch)
    # arg[a, p, n] = m + d(a, p) - d(a, n)
    arg = params.margin + dist[:, :, None] - dist[:, None, :]
    valid = pos[:, :, None] & neg[:, None, :]
    active = valid & (arg > 0)
    n = batch.spec.size
    value = float(np.where(active, arg, 0.0).sum()) / n
    coef = (active.sum(axis=2) - active.sum(axis=1)).astype(np.float64) / n
    return LossResult(value, euclidean_backward(X, dist, coef))


def _cosine_matrix(X):
    Xn, norms = normalize_rows(X)
    return Xn, norms, np.clip(Xn @ Xn.T, -1.0, 1.0)


def unified_anchor_terms(batch: MiniBatch, params: TripletParams):
    """Per-anchor log(1 + sum_p e^{-g s_ap} * sum_n e^{g (s_an + m)}) in factored form.

    Returns (terms, coef, exp_counts, Xn, norms) where ``coef[a, b]`` is the
    derivative of terms[a] with respect to s_ab.
    """
    _check_negatives(batch)
    X = batch.embeddings
    Xn, norms, sim = _cosine_matrix(X)
    pos, neg, _ = _masks(batch)
    g, m = params.scale, params.margin
    n = len(X)
    terms = np.empty(n)
    counts = np.zeros(n, dtype=np.int64)
    coef = np.zeros_like(sim)
    for a in range(n):
        p_idx = np.flatnonzero(pos[a])
        n_idx = np.flatnonzero(neg[a])
        log_pos, w_pos = logsumexp(-g * sim[a, p_idx])
        log_neg, w_neg = logsumexp(g * (sim[a, n_idx] + m))
        counts[a] = p_idx.size + n_idx.size
        t = log_pos + log_neg
        terms[a] = stable_log1p_sumexp([t])
        sig = 0.5 * (1.0 + np.tanh(0.5 * t))  # logistic(t), overflow-free
        coef[a, p_idx] = -g * sig * w_pos
        coef[a, n_idx] = g * sig * w_neg
    return terms, coef, counts, Xn, norms


def unified_batch_all_loss(batch: MiniBatch, params: TripletParams) -> LossResult:
    """Cosine batch-all loss with the exponential sum factored into positive and negative parts.

    Costs (2K - 1) + 2(P - 1)K exponentials per anchor instead of one per triplet.
    """
    terms, coef, counts, Xn, norms = unified_anchor_terms(batch, params)
    n = batch.spec.size
    grad = cosine_backward(Xn, norms, coef / n)
    return LossResult(float(terms.sum()) / n, grad, exp_counts=counts)


def naive_exp_count(P: int, K: int) -> int:
    """Exponentials per anchor if every triplet were exponentiated separately."""
    return (2 * K - 1) * 2 * (P - 1) * K


@dataclass(frozen=True)
class MiningDiagnostic:
    frac_hard_pos_intra: float
    frac_hard_neg_intra: float
    frac_both_intra: float


def mining_diagnostic(batch: MiniBatch) -> MiningDiagnostic:
    """How often batch-hard mining keeps a triplet within the anchor's own modality.

    Fractions are over all anchors: furthest positive shares the anchor's
    modality, closest negative does, and both do.
    """
    _check_negatives(batch)
    dist = pairwise_euclidean(batch.embeddings)
    pos, neg, _ = _masks(batch)
    p_star, n_star = hard_mine(dist, pos, neg)
    mods = batch.modalities
    pos_intra = mods[p_star] == mods
    neg_intra = mods[n_star] == mods
    return MiningDiagnostic(float(pos_intra.mean()), float(neg_intra.mean()),
                            float((pos_intra & neg_intra).mean()))
