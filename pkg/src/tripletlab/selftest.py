"""Seeded oracle-equivalence and gradient checks, runnable from the command line."""
from __future__ import annotations

import sys
from typing import Callable, TextIO

import numpy as np

from . import center, classify, oracle, triplet
from .batch import MiniBatch
from .losses import TripletParams

METRIC_KERNELS: dict[str, Callable] = {
    "batch_hard": triplet.batch_hard_loss,
    "cm_batch_hard": triplet.cross_modality_batch_hard_loss,
    "batch_all": triplet.batch_all_loss,
    "unified_batch_all": triplet.unified_batch_all_loss,
    "bh_hetero_center": center.batch_hard_hetero_center_loss,
    "ba_hetero_center": center.batch_all_hetero_center_loss,
}
CLASSIFY_KERNELS: dict[str, Callable] = {
    "softmax": lambda x, y, W, p: classify.softmax_loss(x, y, W),
    "cosine_softmax": classify.cosine_softmax_loss,
}

ORACLES = {
    "batch_hard": lambda b, p: oracle.batch_hard_value(b, p.margin),
    "cm_batch_hard": lambda b, p: oracle.cross_modality_batch_hard_value(b, p.margin),
    "batch_all": lambda b, p: oracle.batch_all_value(b, p.margin),
    "unified_batch_all": lambda b, p: oracle.unified_value(b, p.margin, p.scale),
    "bh_hetero_center": lambda b, p: oracle.batch_hard_center_value(b, p.margin),
    "ba_hetero_center": lambda b, p: oracle.batch_all_center_value(b, p.margin, p.scale),
}
RELATIVE = {"unified_batch_all"}
GRAD_TOL = 1e-4
FD_STEP = 1e-5
KINK_GAP = 1e-4


def random_batch(rng: np.random.Generator, P: int, K: int, D: int) -> MiniBatch:
    ids = rng.choice(1000, size=P, replace=False)
    return MiniBatch.from_grouped(rng.normal(size=(2 * P * K, D)), P, K, identities=ids)


def _oracle_ok(name, kernel, rng, trials):
    for _ in range(trials):
        b = random_batch(rng, int(rng.integers(2, 5)), int(rng.integers(1, 4)), int(rng.choice([2, 5])))
        p = TripletParams(float(rng.uniform(0.0, 0.5)), float(rng.uniform(1.0, 12.0)))
        got, want = kernel(b, p).value, ORACLES[name](b, p)
        tol = 1e-9 * abs(want) if name in RELATIVE else 1e-12
        if not abs(got - want) <= tol:
            return False
    return True


def _metric_grad_ok(name, kernel, rng, trials):
    done = 0
    while done < trials:
        b = random_batch(rng, int(rng.integers(2, 4)), int(rng.integers(1, 4)), int(rng.choice([2, 5])))
        p = TripletParams(0.3, float(rng.uniform(1.0, 12.0)))
        if oracle.kink_gap(b, name, p.margin) < KINK_GAP:
            continue
        fd = oracle.finite_diff_gradient(lambda X: kernel(b.with_embeddings(X), p).value, b.embeddings, FD_STEP)
        if oracle.gradient_relative_error(kernel(b, p).grad, fd) >= GRAD_TOL:
            return False
        done += 1
    return True


def _classify_grad_ok(kernel, rng, trials):
    for _ in range(trials):
        D, C, N = int(rng.choice([2, 5])), int(rng.integers(2, 6)), int(rng.integers(1, 4))
        x, W = rng.normal(size=(N, D)), rng.normal(size=(D, C))
        y = rng.integers(0, C, size=N)
        p = classify.ClassifyParams(float(rng.uniform(0, 0.5)), float(rng.choice([1.0, 12.0, 64.0])))
        r = kernel(x, y, W, p)
        fx = oracle.finite_diff_gradient(lambda v: kernel(v, y, W, p).value, x, FD_STEP)
        fw = oracle.finite_diff_gradient(lambda v: kernel(x, y, v, p).value, W, FD_STEP)
        if (oracle.gradient_relative_error(r.grad, fx) >= GRAD_TOL
                or oracle.gradient_relative_error(r.weight_grad, fw) >= GRAD_TOL):
            return False
    return True


def run_selftest(metric_kernels: dict | None = None, classify_kernels: dict | None = None,
                 trials: int = 10, out: TextIO | None = None) -> int:
    """Print one PASS/FAIL line per check; return 0 iff all pass.

    Kernel overrides exist so a deliberately broken kernel can be checked to fail.
    """
    out = sys.stdout if out is None else out
    metric = {**METRIC_KERNELS, **(metric_kernels or {})}
    classifiers = {**CLASSIFY_KERNELS, **(classify_kernels or {})}
    results = []
    for k, (name, kernel) in enumerate(metric.items()):
        results.append((f"oracle {name}", _oracle_ok(name, kernel, np.random.default_rng(100 + k), trials)))
    for k, (name, kernel) in enumerate(metric.items()):
        results.append((f"gradient {name}", _metric_grad_ok(name, kernel, np.random.default_rng(200 + k), trials)))
    for k, (name, kernel) in enumerate(classifiers.items()):
        results.append((f"gradient {name}", _classify_grad_ok(kernel, np.random.default_rng(300 + k), trials)))
    for name, ok in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}", file=out)
    failed = sum(not ok for _, ok in results)
    print(f"{len(results) - failed}/{len(results)} checks passed", file=out)
    return 0 if failed == 0 else 1
