"""Desk-scale training of a free embedding table under any combination of the losses.

Each dataset sample owns one learnable vector, so the losses act on the
vectors directly. Optimizer is Adam with coupled L2 weight decay; the
learning rate warms up linearly and then follows a cosine curve.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import center, classify, triplet
from .batch import BatchSpec, MiniBatch, Modality, Sample, batches_per_epoch, index_dataset, sample_2pk
from .losses import TripletParams

BETA1, BETA2, EPS = 0.9, 0.999, 1e-8

LOSS_NAMES = (
    "batch_hard", "cm_batch_hard", "batch_all", "unified_batch_all",
    "softmax", "cosine_softmax", "bh_hetero_center", "ba_hetero_center",
)
DEFAULT_LOSSES = ("unified_batch_all", "cosine_softmax", "ba_hetero_center")


@dataclass(frozen=True)
class SyntheticSpec:
    identities: int = 40
    samples_per_modality: int = 8
    dim: int = 32
    identity_spread: float = 1.0
    modality_offset: float = 0.5
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.identities < 2:
            raise ValueError("identities must be >= 2")
        for name in ("samples_per_modality", "dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("identity_spread", "modality_offset", "noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def _on_sphere(rng: np.random.Generator, n: int, dim: int, radius: float) -> np.ndarray:
    v = rng.normal(size=(n, dim))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


def generate_synthetic_dataset(spec: SyntheticSpec) -> list[Sample]:
    """Identity centers on a sphere, a per-identity offset per modality, isotropic noise.

    Samples come out identity by identity, visible before infrared.
    """
    rng = np.random.default_rng(spec.seed)
    centers = _on_sphere(rng, spec.identities, spec.dim, spec.identity_spread)
    offsets = _on_sphere(rng, 2 * spec.identities, spec.dim, spec.modality_offset)
    offsets = offsets.reshape(spec.identities, 2, spec.dim)
    out = []
    for i in range(spec.identities):
        for mod in (Modality.VISIBLE, Modality.INFRARED):
            noise = rng.normal(scale=spec.noise, size=(spec.samples_per_modality, spec.dim))
            for j in range(spec.samples_per_modality):
                out.append(Sample(centers[i] + offsets[i, mod] + noise[j], i, mod, j))
    return out


@dataclass(frozen=True)
class TrainConfig:
    spec: BatchSpec = field(default_factory=lambda: BatchSpec(6, 8))
    epochs: int = 24
    warmup_epochs: int = 2
    base_lr: float = 6e-4
    weight_decay: float = 5e-4
    margin: float = 0.3
    unified_scale: float = 12.0
    center_scale: float = 12.0
    cosine_scale: float = 64.0
    losses: tuple[str, ...] = DEFAULT_LOSSES
    schedule: str = "cosine"
    init_noise: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError(f"warmup_epochs must be in [0, epochs), got {self.warmup_epochs}")
        if not self.base_lr > 0:
            raise ValueError(f"base_lr must be > 0, got {self.base_lr}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not self.losses:
            raise ValueError("select at least one loss")
        unknown = [n for n in self.losses if n not in LOSS_NAMES]
        if unknown:
            raise ValueError(f"unknown loss {unknown[0]!r}; choose from {', '.join(LOSS_NAMES)}")
        if len(set(self.losses)) != len(self.losses):
            raise ValueError("duplicate loss in selection")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"schedule must be 'cosine' or 'constant', got {self.schedule!r}")
        # parameter objects validate margin and scales
        self.triplet_params(), self.center_params(), self.classify_params()

    def triplet_params(self) -> TripletParams:
        return TripletParams(self.margin, self.unified_scale)

    def center_params(self) -> TripletParams:
        return TripletParams(self.margin, self.center_scale)

    def classify_params(self) -> classify.ClassifyParams:
        return classify.ClassifyParams(self.margin, self.cosine_scale)


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if cfg.schedule == "constant":
        return cfg.base_lr
    if epoch < cfg.warmup_epochs:
        return cfg.base_lr * (epoch + 1) / cfg.warmup_epochs
    phase = (epoch - cfg.warmup_epochs) / (cfg.epochs - cfg.warmup_epochs)
    return 0.5 * cfg.base_lr * (1.0 + math.cos(math.pi * phase))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), 0)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              weight_decay: float = 0.0) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update with wd * param added to the gradient."""
    g = grad + weight_decay * param
    t = state.t + 1
    m = BETA1 * state.m + (1 - BETA1) * g
    v = BETA2 * state.v + (1 - BETA2) * g * g
    m_hat = m / (1 - BETA1 ** t)
    v_hat = v / (1 - BETA2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + EPS), AdamState(m, v, t)


LossFn = Callable[[MiniBatch, np.ndarray, np.ndarray, TrainConfig], tuple]


def _loss_table() -> dict[str, LossFn]:
    def metric(fn, params):
        def run(batch, W, labels, cfg):
            r = fn(batch, params(cfg))
            return r.value, r.grad, None
        return run

    def softmax(batch, W, labels, cfg):
        r = classify.softmax_loss(batch.embeddings, labels, W)
        return r.value, r.grad, r.weight_grad

    def cosine(batch, W, labels, cfg):
        r = classify.cosine_softmax_loss(batch.embeddings, labels, W, cfg.classify_params())
        return r.value, r.grad, r.weight_grad

    tp = TrainConfig.triplet_params
    return {
        "batch_hard": metric(triplet.batch_hard_loss, tp),
        "cm_batch_hard": metric(triplet.cross_modality_batch_hard_loss, tp),
        "batch_all": metric(triplet.batch_all_loss, tp),
        "unified_batch_all": metric(triplet.unified_batch_all_loss, tp),
        "softmax": softmax,
        "cosine_softmax": cosine,
        "bh_hetero_center": metric(center.batch_hard_hetero_center_loss, TrainConfig.center_params),
        "ba_hetero_center": metric(center.batch_all_hetero_center_loss, TrainConfig.center_params),
    }


LOSSES = _loss_table()


def evaluate_losses(batch: MiniBatch, W: np.ndarray, labels: np.ndarray, cfg: TrainConfig):
    """Sum the selected losses. Returns (per-loss values, total, grad wrt rows, grad wrt W)."""
    values = {}
    gX = np.zeros_like(batch.embeddings)
    gW = np.zeros_like(W)
    for name in cfg.losses:
        v, gx, gw = LOSSES[name](batch, W, labels, cfg)
        values[name] = v
        gX += gx
        if gw is not None:
            gW += gw
    return values, float(sum(values[n] for n in cfg.losses)), gX, gW


@dataclass
class EmbeddingTable:
    embeddings: np.ndarray   # (N, D), row r belongs to dataset[r]
    weights: np.ndarray      # (D, C) classifier centers, one column per identity
    classes: np.ndarray      # identity label of each weight column

    def samples(self, dataset: Sequence[Sample]) -> list[Sample]:
        return [Sample(self.embeddings[r].copy(), s.identity, s.modality, s.sample_index)
                for r, s in enumerate(dataset)]


@dataclass
class TrainResult:
    table: EmbeddingTable
    trace: list[dict]
    losses: tuple[str, ...]

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "epoch", "lr", *self.losses, "total"])
        for row in self.trace:
            w.writerow([row["step"], row["epoch"], f"{row['lr']:.6e}",
                        *(f"{row[n]:.6f}" for n in self.losses), f"{row['total']:.6f}"])
        return buf.getvalue()


def init_table(dataset: Sequence[Sample], cfg: TrainConfig, rng: np.random.Generator) -> EmbeddingTable:
    X = np.stack([np.asarray(s.embedding, dtype=np.float64) for s in dataset])
    X = X + rng.normal(scale=cfg.init_noise, size=X.shape)
    classes = np.unique([s.identity for s in dataset])
    W = rng.normal(scale=0.01, size=(X.shape[1], len(classes)))
    W /= np.linalg.norm(W, axis=0, keepdims=True)
    return EmbeddingTable(X, W, classes)


def train_run(dataset: Sequence[Sample], cfg: TrainConfig) -> TrainResult:
    rng = np.random.default_rng(cfg.seed)
    index = index_dataset(dataset)
    table = init_table(dataset, cfg, rng)
    class_of = {int(c): k for k, c in enumerate(table.classes)}
    E, W = table.embeddings, table.weights
    state_E, state_W = AdamState.zeros_like(E), AdamState.zeros_like(W)
    uses_weights = any(n in ("softmax", "cosine_softmax") for n in cfg.losses)

    n_batches = batches_per_epoch(len(dataset), cfg.spec)
    if n_batches < 1:
        raise ValueError(f"dataset of {len(dataset)} samples is smaller than one batch of {cfg.spec.size}")
    trace = []
    step = 0
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(epoch, cfg)
        for _ in range(n_batches):
            drawn = sample_2pk(dataset, cfg.spec, rng, index=index)
            batch = drawn.with_embeddings(E[drawn.source])
            labels = np.array([class_of[int(i)] for i in batch.identities])
            values, total, gX, gW = evaluate_losses(batch, W, labels, cfg)
            if not np.isfinite(total) or not np.all(np.isfinite(gX)):
                raise FloatingPointError(f"non-finite loss or gradient at step {step}")
            grad_E = np.zeros_like(E)
            np.add.at(grad_E, drawn.source, gX)
            E, state_E = adam_step(E, grad_E, state_E, lr, cfg.weight_decay)
            if uses_weights:
                W, state_W = adam_step(W, gW, state_W, lr, cfg.weight_decay)
            trace.append({"step": step, "epoch": epoch, "lr": lr, **values, "total": total})
            step += 1
    return TrainResult(EmbeddingTable(E, W, table.classes), trace, tuple(cfg.losses))
