"""Identity/modality labels and 2PK mini-batch sampling."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Sequence

import numpy as np


class Modality(IntEnum):
    VISIBLE = 0
    INFRARED = 1


@dataclass(frozen=True)
class Sample:
    embedding: np.ndarray
    identity: int
    modality: Modality
    sample_index: int = 0


@dataclass(frozen=True)
class BatchSpec:
    P: int
    K: int

    def __post_init__(self):
        if self.P < 2:
            raise ValueError(f"P must be >= 2 so negatives exist, got {self.P}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")

    @property
    def size(self) -> int:
        return 2 * self.P * self.K


@dataclass
class MiniBatch:
    """2PK batch in canonical order.

    Rows are grouped by identity; inside an identity the K visible rows come
    first, then the K infrared rows. ``source`` holds the dataset position of
    each row when the batch was drawn from a dataset.
    """

    embeddings: np.ndarray
    identities: np.ndarray
    modalities: np.ndarray
    spec: BatchSpec
    source: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.identities = np.asarray(self.identities, dtype=np.int64)
        self.modalities = np.asarray(self.modalities, dtype=np.int64)
        validate_layout(self.identities, self.modalities, self.spec)
        if self.embeddings.shape[0] != self.spec.size or self.embeddings.ndim != 2:
            raise ValueError(f"expected {self.spec.size} embeddings, got shape {self.embeddings.shape}")
        if not np.all(np.isfinite(self.embeddings)):
            raise ValueError("batch contains non-finite embeddings")

    @property
    def P(self) -> int:
        return self.spec.P

    @property
    def K(self) -> int:
        return self.spec.K

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def with_embeddings(self, X) -> "MiniBatch":
        return replace(self, embeddings=np.array(X, dtype=np.float64))

    def samples(self) -> list[Sample]:
        out = []
        for r in range(self.spec.size):
            out.append(Sample(self.embeddings[r].copy(), int(self.identities[r]),
                              Modality(int(self.modalities[r])), (r % (2 * self.K)) % self.K))
        return out

    @classmethod
    def from_grouped(cls, X, P: int, K: int, identities=None) -> "MiniBatch":
        """Build a batch from rows already in canonical order."""
        spec = BatchSpec(P, K)
        ids = np.repeat(np.arange(P) if identities is None else np.asarray(identities), 2 * K)
        mods = np.tile(np.repeat([Modality.VISIBLE, Modality.INFRARED], K), P)
        return cls(np.asarray(X, dtype=np.float64), ids, mods, spec)


def validate_layout(identities: np.ndarray, modalities: np.ndarray, spec: BatchSpec) -> None:
    P, K = spec.P, spec.K
    if identities.shape != (spec.size,) or modalities.shape != (spec.size,):
        raise ValueError(f"expected {spec.size} labels per field")
    block = np.repeat([Modality.VISIBLE, Modality.INFRARED], K)
    seen = set()
    for i in range(P):
        rows = slice(2 * K * i, 2 * K * (i + 1))
        ids = identities[rows]
        if np.any(ids != ids[0]):
            raise ValueError(f"identity block {i} is not contiguous")
        if int(ids[0]) in seen:
            raise ValueError(f"identity {int(ids[0])} appears in more than one block")
        seen.add(int(ids[0]))
        if np.any(modalities[rows] != block):
            raise ValueError(f"identity {int(ids[0])}: expected {K} visible then {K} infrared rows")


def index_dataset(dataset: Sequence[Sample]) -> dict[int, dict[int, list[int]]]:
    """identity -> modality -> dataset positions, in dataset order."""
    table: dict[int, dict[int, list[int]]] = defaultdict(lambda: {0: [], 1: []})
    for pos, s in enumerate(dataset):
        table[int(s.identity)][int(s.modality)].append(pos)
    return dict(table)


def sample_2pk(dataset: Sequence[Sample], spec: BatchSpec, rng: np.random.Generator,
               index: dict | None = None) -> MiniBatch:
    """Draw P identities, then K visible and K infrared samples of each, without replacement."""
    index = index_dataset(dataset) if index is None else index
    eligible = []
    for ident in sorted(index):
        cells = index[ident]
        if len(cells[0]) >= spec.K and len(cells[1]) >= spec.K:
            eligible.append(ident)
    if len(eligible) < spec.P:
        deficient = []
        for ident in sorted(index):
            for mod in (Modality.VISIBLE, Modality.INFRARED):
                if len(index[ident][mod]) < spec.K:
                    deficient.append(f"identity {ident} {mod.name.lower()} has "
                                     f"{len(index[ident][mod])} < K={spec.K}")
        detail = "; ".join(deficient) if deficient else f"only {len(index)} identities"
        raise ValueError(f"cannot draw P={spec.P} identities: {detail}")

    chosen = rng.choice(len(eligible), size=spec.P, replace=False)
    rows = []
    for c in chosen:
        cells = index[eligible[c]]
        for mod in (Modality.VISIBLE, Modality.INFRARED):
            picks = rng.choice(len(cells[mod]), size=spec.K, replace=False)
            rows.extend(cells[mod][p] for p in picks)

    rows = np.asarray(rows, dtype=np.int64)
    X = np.stack([dataset[r].embedding for r in rows]).astype(np.float64)
    ids = np.array([dataset[r].identity for r in rows], dtype=np.int64)
    mods = np.array([int(dataset[r].modality) for r in rows], dtype=np.int64)
    return MiniBatch(X, ids, mods, spec, source=rows)


def batches_per_epoch(dataset_size: int, spec: BatchSpec) -> int:
    return dataset_size // spec.size
