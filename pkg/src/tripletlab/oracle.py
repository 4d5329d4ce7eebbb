"""Brute-force references for the loss kernels and retrieval metrics.

Deliberately naive: plain Python loops over lists of floats and the ``math``
module, and no imports from the kernel modules, so agreement with the kernels
is independent evidence. Inputs are a plain list of rows plus identity and
modality label lists in canonical batch order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _rows(batch):
    return ([list(map(float, r)) for r in batch.embeddings],
            [int(i) for i in batch.identities], [int(m) for m in batch.modalities])


def _euclid(x, y):
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(x, y)))


def _cos(x, y):
    dot = sum(a * b for a, b in zip(x, y))
    nx = math.sqrt(sum(a * a for a in x))
    ny = math.sqrt(sum(b * b for b in y))
    return dot / (nx * ny)


def _cos_dist(x, y):
    return 1.0 - _cos(x, y)


@dataclass
class TripletEnumeration:
    triplets: list  # (anchor, positive, negative, hinge)

    def __len__(self):
        return len(self.triplets)


def enumerate_triplets(batch, margin: float, metric: str = "euclidean") -> TripletEnumeration:
    d = {"euclidean": _euclid, "cosine_distance": _cos_dist}[metric]
    X, ids, _ = _rows(batch)
    out = []
    for a in range(len(X)):
        for p in range(len(X)):
            if p == a or ids[p] != ids[a]:
                continue
            for n in range(len(X)):
                if ids[n] == ids[a]:
                    continue
                out.append((a, p, n, max(0.0, margin + d(X[a], X[p]) - d(X[a], X[n]))))
    return TripletEnumeration(out)


def batch_all_value(batch, margin):
    enum = enumerate_triplets(batch, margin)
    return sum(t[3] for t in enum.triplets) / len(batch.embeddings)


def batch_hard_value(batch, margin, cross_only=False):
    """Per-anchor maximum hinge over triplets, summed.

    The hinge is monotone in both distances, so the largest triplet hinge is
    the hinge of the hardest triplet.
    """
    X, ids, mods = _rows(batch)
    total = 0.0
    for a in range(len(X)):
        best = 0.0
        for p in range(len(X)):
            if p == a or ids[p] != ids[a]:
                continue
            if cross_only and mods[p] == mods[a]:
                continue
            for n in range(len(X)):
                if ids[n] == ids[a] or (cross_only and mods[n] == mods[a]):
                    continue
                best = max(best, margin + _euclid(X[a], X[p]) - _euclid(X[a], X[n]))
        total += best
    return total


def cross_modality_batch_hard_value(batch, margin):
    return batch_hard_value(batch, margin) + batch_hard_value(batch, margin, cross_only=True)


def unified_pair_terms(batch, margin, scale):
    """Per anchor, the list of gamma * (s_an - s_ap + m) over every (p, n) pair."""
    X, ids, _ = _rows(batch)
    per_anchor = []
    for a in range(len(X)):
        zs = []
        for p in range(len(X)):
            if p == a or ids[p] != ids[a]:
                continue
            for n in range(len(X)):
                if ids[n] == ids[a]:
                    continue
                zs.append(scale * (_cos(X[a], X[n]) - _cos(X[a], X[p]) + margin))
        per_anchor.append(zs)
    return per_anchor


def unified_value(batch, margin, scale):
    """Unexpanded form: one exponential per triplet."""
    per_anchor = unified_pair_terms(batch, margin, scale)
    return sum(math.log(1.0 + sum(math.exp(z) for z in zs)) for zs in per_anchor) / len(per_anchor)


def hardest_cosine_argument(batch, margin):
    """Per anchor m + max_p d(a,p) - min_n d(a,n) with cosine distance, before the hinge."""
    X, ids, _ = _rows(batch)
    out = []
    for a in range(len(X)):
        worst_pos = max(_cos_dist(X[a], X[p]) for p in range(len(X)) if p != a and ids[p] == ids[a])
        best_neg = min(_cos_dist(X[a], X[n]) for n in range(len(X)) if ids[n] != ids[a])
        out.append(margin + worst_pos - best_neg)
    return out


def hardest_cosine_hinge(batch, margin):
    return [max(0.0, v) for v in hardest_cosine_argument(batch, margin)]


def _centers(batch, normalize):
    X, ids, mods = _rows(batch)
    groups = {}
    order = []
    for x, i, m in zip(X, ids, mods):
        if normalize:
            n = math.sqrt(sum(v * v for v in x))
            x = [v / n for v in x]
        if (i, m) not in groups:
            groups[(i, m)] = []
            order.append((i, m))
        groups[(i, m)].append(x)
    centers = {}
    for key in order:
        members = groups[key]
        centers[key] = [sum(col) / len(members) for col in zip(*members)]
    return centers, order


def batch_hard_center_value(batch, margin):
    centers, order = _centers(batch, normalize=False)
    total = 0.0
    for (i, m) in order:
        anchor = centers[(i, m)]
        positive = centers[(i, 1 - m)]
        closest = min(_euclid(anchor, centers[k]) for k in order if k[0] != i)
        total += max(0.0, margin + _euclid(anchor, positive) - closest)
    return total


def batch_all_center_value(batch, margin, scale):
    centers, order = _centers(batch, normalize=True)
    total = 0.0
    for (i, m) in order:
        anchor = centers[(i, m)]
        s_pos = _cos(anchor, centers[(i, 1 - m)])
        acc = 1.0
        for k in order:
            if k[0] != i:
                acc += math.exp(scale * (_cos(anchor, centers[k]) - s_pos + margin))
        total += math.log(acc)
    return total


def naive_mining_diagnostic(batch):
    """(frac pos intra, frac neg intra, frac both) by explicit scanning; ties keep the first."""
    X, ids, mods = _rows(batch)
    pos_intra = neg_intra = both = 0
    for a in range(len(X)):
        far, far_d = None, -1.0
        near, near_d = None, math.inf
        for b in range(len(X)):
            d = _euclid(X[a], X[b])
            if b != a and ids[b] == ids[a] and d > far_d:
                far, far_d = b, d
            if ids[b] != ids[a] and d < near_d:
                near, near_d = b, d
        pi, ni = mods[far] == mods[a], mods[near] == mods[a]
        pos_intra += pi
        neg_intra += ni
        both += pi and ni
    n = len(X)
    return pos_intra / n, neg_intra / n, both / n


def finite_diff_gradient(f, x, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar f at array x, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + step
        up = f(x.copy())
        x.flat[i] = orig - step
        down = f(x.copy())
        x.flat[i] = orig
        grad.flat[i] = (up - down) / (2 * step)
    return grad


def exhaustive_ap(relevance) -> float:
    hits = 0
    precisions = []
    for k, rel in enumerate(relevance, start=1):
        if rel:
            hits += 1
            precisions.append(hits / k)
    if not precisions:
        raise ValueError("no relevant item in ranking")
    return sum(precisions) / len(precisions)


def kink_gap(batch, loss: str, margin: float) -> float:
    """Distance to the nearest non-differentiable point of a hinge-based loss.

    Covers hinge arguments near 0 and near-ties between competing hard
    positives/negatives (where the arg-max switches). Smooth losses give inf.
    """
    if loss in ("unified_batch_all", "ba_hetero_center", "softmax", "cosine_softmax"):
        return math.inf
    if loss in ("bh_hetero_center",):
        centers, order = _centers(batch, normalize=False)
        gaps = []
        for (i, m) in order:
            anchor = centers[(i, m)]
            negs = sorted(_euclid(anchor, centers[k]) for k in order if k[0] != i)
            gaps.append(abs(margin + _euclid(anchor, centers[(i, 1 - m)]) - negs[0]))
            if len(negs) > 1:
                gaps.append(negs[1] - negs[0])
        return min(gaps)

    X, ids, mods = _rows(batch)
    gaps = []
    for a in range(len(X)):
        for cross_only in ((False, True) if loss == "cm_batch_hard" else (False,)):
            pos = sorted((_euclid(X[a], X[p]) for p in range(len(X))
                          if p != a and ids[p] == ids[a] and not (cross_only and mods[p] == mods[a])),
                         reverse=True)
            neg = sorted(_euclid(X[a], X[n]) for n in range(len(X))
                         if ids[n] != ids[a] and not (cross_only and mods[n] == mods[a]))
            if loss == "batch_all":
                gaps.extend(abs(margin + dp - dn) for dp in pos for dn in neg)
                continue
            gaps.append(abs(margin + pos[0] - neg[0]))
            if len(pos) > 1:
                gaps.append(pos[0] - pos[1])
            if len(neg) > 1:
                gaps.append(neg[1] - neg[0])
    return min(gaps)


def gradient_relative_error(analytic, numeric) -> float:
    """max |analytic - numeric| scaled by the larger of the two max-magnitudes."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.abs(a).max()), float(np.abs(n).max()), 1e-8)
    return float(np.abs(a - n).max()) / scale
