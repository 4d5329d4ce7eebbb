"""Cross-modality retrieval: cosine-distance ranking, CMC and mAP.

Camera-level gallery draws are replaced by identity-level ones: a single-shot
trial keeps one uniformly drawn gallery sample per identity. Distance ties
keep the original gallery order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .batch import Sample
from .numkit import cosine_similarity, normalize_rows

REPORT_RANKS = (1, 5, 10, 20)


def cosine_distance(x, y) -> float:
    return 1.0 - cosine_similarity(x, y)


@dataclass
class RetrievalReport:
    cmc: np.ndarray          # cmc[k - 1] is the rank-k matching rate
    map: float
    protocol: dict = field(default_factory=dict)

    def rank(self, k: int) -> float:
        """Rank-k rate; ranks past the gallery depth return the full-depth rate."""
        if k < 1:
            raise ValueError("ranks start at 1")
        return float(self.cmc[min(k, len(self.cmc)) - 1])

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "cmc": {f"rank{k}": round(self.rank(k), 6) for k in REPORT_RANKS},
            "map": round(float(self.map), 6),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def ranked_relevance(query_emb: np.ndarray, query_ids: np.ndarray,
                     gallery_emb: np.ndarray, gallery_ids: np.ndarray) -> np.ndarray:
    """Boolean (Q, G) matrix: row q is gallery relevance sorted by ascending cosine distance."""
    Qn, _ = normalize_rows(query_emb)
    Gn, _ = normalize_rows(gallery_emb)
    dist = 1.0 - Qn @ Gn.T
    order = np.argsort(dist, axis=1, kind="stable")
    return gallery_ids[order] == query_ids[:, None]


def cmc_and_ap(relevance: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-query CMC indicator rows and average precisions from ranked relevance."""
    if not np.all(relevance.any(axis=1)):
        raise ValueError("every query needs at least one relevant gallery item")
    first_hit = np.argmax(relevance, axis=1)
    G = relevance.shape[1]
    cmc = (np.arange(G)[None, :] >= first_hit[:, None]).astype(np.float64)
    hits = np.cumsum(relevance, axis=1)
    precision = hits / np.arange(1, G + 1)[None, :]
    ap = (precision * relevance).sum(axis=1) / relevance.sum(axis=1)
    return cmc, ap


def _stack(samples: Sequence[Sample]):
    X = np.stack([np.asarray(s.embedding, dtype=np.float64) for s in samples])
    ids = np.array([s.identity for s in samples], dtype=np.int64)
    mods = np.array([int(s.modality) for s in samples], dtype=np.int64)
    return X, ids, mods


def evaluate(queries: Sequence[Sample], gallery: Sequence[Sample], shot: str = "single",
             trials: int = 10, rng: np.random.Generator | None = None) -> RetrievalReport:
    if shot not in ("single", "multi"):
        raise ValueError(f"shot must be 'single' or 'multi', got {shot!r}")
    if not queries or not gallery:
        raise ValueError("queries and gallery must be non-empty")
    QX, Qid, Qmod = _stack(queries)
    GX, Gid, Gmod = _stack(gallery)
    if len(np.unique(Qmod)) != 1 or len(np.unique(Gmod)) != 1 or Qmod[0] == Gmod[0]:
        raise ValueError("queries and gallery must each be one modality, and differ")
    missing = sorted(set(Qid.tolist()) - set(Gid.tolist()))
    if missing:
        raise ValueError(f"query identity {missing[0]} has no gallery sample")

    if shot == "multi":
        trials = 1
    elif trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng

    cmc_sum = None
    ap_sum = 0.0
    for _ in range(trials):
        if shot == "single":
            keep = []
            for ident in np.unique(Gid):
                members = np.flatnonzero(Gid == ident)
                keep.append(members[rng.integers(len(members))])
            keep = np.sort(np.asarray(keep))
        else:
            keep = np.arange(len(Gid))
        rel = ranked_relevance(QX, Qid, GX[keep], Gid[keep])
        cmc, ap = cmc_and_ap(rel)
        cmc_mean = cmc.mean(axis=0)
        cmc_sum = cmc_mean if cmc_sum is None else cmc_sum + cmc_mean
        ap_sum += float(ap.mean())

    protocol = {
        "shot": shot,
        "trials": trials,
        "gallery_draw": "identity-level" if shot == "single" else "full",
        "query_modality": int(Qmod[0]),
        "gallery_modality": int(Gmod[0]),
    }
    return RetrievalReport(cmc_sum / trials, ap_sum / trials, protocol)
