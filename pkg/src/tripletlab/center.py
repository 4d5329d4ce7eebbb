"""Per-identity modality centers and the two center-triplet losses.

Centers are laid out identity by identity, visible then infrared, so center
row ``2 * i + mod`` belongs to batch block ``i``. Gradients flow back through
the mean (and, for the batch-all variant, through L2 normalization) to the
member embeddings.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .batch import MiniBatch
from .losses import LossResult, TripletParams
from .numkit import (cosine_backward, euclidean_backward, normalize_rows, pairwise_euclidean,
                     stable_log1p_sumexp, unit_backward)


@dataclass
class CenterSet:
    centers: np.ndarray          # (2P, D)
    identities: np.ndarray       # (2P,)
    modalities: np.ndarray       # (2P,)
    normalized_inputs: bool

    def center(self, block: int, modality: int) -> np.ndarray:
        return self.centers[2 * block + int(modality)]


def _members(batch: MiniBatch) -> np.ndarray:
    """(2P, K, D) view of the batch: one row of K members per center."""
    return batch.embeddings.reshape(2 * batch.P, batch.K, batch.dim)


def compute_centers(batch: MiniBatch, normalize_first: bool) -> CenterSet:
    X = batch.embeddings
    if normalize_first:
        X, _ = normalize_rows(X)
    centers = X.reshape(2 * batch.P, batch.K, batch.dim).mean(axis=1)
    ids = batch.identities[:: batch.K]
    mods = batch.modalities[:: batch.K]
    return CenterSet(centers, ids, mods, normalize_first)


def _center_masks(P: int):
    block = np.repeat(np.arange(P), 2)
    same = block[:, None] == block[None, :]
    partner = same & ~np.eye(2 * P, dtype=bool)
    return partner, ~same


def _spread_to_members(batch: MiniBatch, g_centers: np.ndarray) -> np.ndarray:
    return np.repeat(g_centers / batch.K, batch.K, axis=0)


def batch_hard_hetero_center_loss(batch: MiniBatch, params: TripletParams) -> LossResult:
    """Each modality center is pulled toward its partner center and pushed from the
    closest center of any other identity (Euclidean, raw means, summed)."""
    if batch.P < 2:
        raise ValueError("batch needs at least two identities (P >= 2)")
    C = compute_centers(batch, normalize_first=False).centers
    dist = pairwise_euclidean(C)
    partner, neg = _center_masks(batch.P)
    rows = np.arange(len(C))
    p_star = np.argmax(partner, axis=1)
    n_star = np.argmin(np.where(neg, dist, np.inf), axis=1)
    arg = params.margin + dist[rows, p_star] - dist[rows, n_star]
    active = arg > 0
    coef = np.zeros_like(dist)
    np.add.at(coef, (rows[active], p_star[active]), 1.0)
    np.add.at(coef, (rows[active], n_star[active]), -1.0)
    g_centers = euclidean_backward(C, dist, coef)
    return LossResult(float(np.where(active, arg, 0.0).sum()), _spread_to_members(batch, g_centers))


def batch_all_hetero_center_loss(batch: MiniBatch, params: TripletParams) -> LossResult:
    """Soft (log-sum-exp) center triplets over cosine similarity of normalized-member centers.

    Every center is an anchor; its positive is the partner center, its
    negatives are both centers of every other identity. Summed over anchors.
    """
    if batch.P < 2:
        raise ValueError("batch needs at least two identities (P >= 2)")
    Xu, xnorms = normalize_rows(batch.embeddings)
    C = Xu.reshape(2 * batch.P, batch.K, batch.dim).mean(axis=1)
    Cn, cnorms = normalize_rows(C)
    sim = np.clip(Cn @ Cn.T, -1.0, 1.0)
    partner, neg = _center_masks(batch.P)
    g, m = params.scale, params.margin
    value = 0.0
    coef = np.zeros_like(sim)
    for a in range(len(C)):
        p = int(np.flatnonzero(partner[a])[0])
        n_idx = np.flatnonzero(neg[a])
        z = g * (sim[a, n_idx] - sim[a, p] + m)
        value += stable_log1p_sumexp(z)
        top = max(0.0, float(z.max()))
        e = np.exp(z - top)
        w = e / (np.exp(-top) + e.sum())
        coef[a, n_idx] += g * w
        coef[a, p] -= g * w.sum()
    g_centers = cosine_backward(Cn, cnorms, coef)
    g_unit = _spread_to_members(batch, g_centers)
    return LossResult(float(value), unit_backward(Xu, xnorms, g_unit))
