import math

import numpy as np
import pytest

from tripletlab.batch import BatchSpec, sample_2pk
from tripletlab.train import (AdamState, LOSS_NAMES, DEFAULT_LOSSES, SyntheticSpec, TrainConfig, adam_step,
                              evaluate_losses, generate_synthetic_dataset, init_table, lr_at_epoch, train_run)

DEFAULTS = TrainConfig()


def test_lr_schedule_examples():
    assert lr_at_epoch(0, DEFAULTS) == pytest.approx(3e-4, rel=1e-15)
    assert lr_at_epoch(1, DEFAULTS) == pytest.approx(6e-4, rel=1e-15)
    assert lr_at_epoch(2, DEFAULTS) == pytest.approx(6e-4, rel=1e-15)
    assert lr_at_epoch(13, DEFAULTS) == pytest.approx(3e-4, rel=1e-12)
    with pytest.raises(ValueError):
        lr_at_epoch(24, DEFAULTS)
    with pytest.raises(ValueError):
        lr_at_epoch(-1, DEFAULTS)


def test_lr_is_positive_and_decreasing_after_warmup():
    lrs = [lr_at_epoch(e, DEFAULTS) for e in range(24)]
    assert all(lr > 0 for lr in lrs)
    assert all(b <= a for a, b in zip(lrs[2:], lrs[3:]))


def test_adam_first_step_is_lr():
    p = np.array([0.5])
    new, state = adam_step(p, np.array([1.0]), AdamState.zeros_like(p), 1e-3)
    assert new[0] - 0.5 == pytest.approx(-1e-3, abs=1e-6)
    assert state.t == 1


def test_adam_zero_gradient_fixed_point():
    p = np.array([0.5, -2.0])
    new, _ = adam_step(p, np.zeros(2), AdamState.zeros_like(p), 1e-3)
    np.testing.assert_array_equal(new, p)


def test_adam_weight_decay_shrinks():
    p = np.array([0.5])
    new, _ = adam_step(p, np.zeros(1), AdamState.zeros_like(p), 1e-3, weight_decay=5e-4)
    assert new[0] < 0.5


def test_adam_matches_reference_recurrence():
    rng = np.random.default_rng(0)
    p, state = rng.normal(size=3), None
    m = v = np.zeros(3)
    ref = p.copy()
    state = AdamState.zeros_like(p)
    for t in range(1, 6):
        g = rng.normal(size=3)
        p, state = adam_step(p, g, state, 0.01, 0.1)
        gg = g + 0.1 * ref
        m = 0.9 * m + 0.1 * gg
        v = 0.999 * v + 0.001 * gg ** 2
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p, ref, rtol=1e-14)


def test_synthetic_examples():
    ds = generate_synthetic_dataset(SyntheticSpec(3, 4, 5, 1.0, 0.0, 0.0, seed=1))
    for i in range(3):
        rows = [s.embedding for s in ds if s.identity == i]
        assert all(np.array_equal(r, rows[0]) for r in rows)
    assert len(generate_synthetic_dataset(SyntheticSpec(2, 1, 3, seed=0))) == 4
    a = generate_synthetic_dataset(SyntheticSpec(seed=4))
    b = generate_synthetic_dataset(SyntheticSpec(seed=4))
    assert all(np.array_equal(x.embedding, y.embedding) for x, y in zip(a, b))


def test_synthetic_geometry():
    spec = SyntheticSpec(5, 3, 6, identity_spread=2.0, modality_offset=0.5, noise=0.0, seed=2)
    ds = generate_synthetic_dataset(spec)
    for i in range(5):
        vis = ds[6 * i].embedding
        inf = ds[6 * i + 3].embedding
        # same identity center, so the modality gap is the difference of two offsets of norm 0.5
        assert 0 < np.linalg.norm(vis - inf) <= 1.0 + 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(warmup_epochs=24)
    with pytest.raises(ValueError, match="unknown loss"):
        TrainConfig(losses=("triplet",))


def separated_dataset():
    return generate_synthetic_dataset(SyntheticSpec(6, 2, 8, identity_spread=10.0, modality_offset=0.0,
                                                    noise=0.0, seed=0))


def test_zero_gradient_regime():
    ds = separated_dataset()
    cfg = TrainConfig(spec=BatchSpec(2, 1), epochs=3, warmup_epochs=1, losses=("batch_all",), init_noise=0.0,
                      weight_decay=0.0)
    res = train_run(ds, cfg)
    assert all(row["batch_all"] == 0.0 for row in res.trace)
    X0 = np.stack([s.embedding for s in ds])
    np.testing.assert_array_equal(res.table.embeddings, X0)
    decayed = train_run(ds, TrainConfig(spec=BatchSpec(2, 1), epochs=3, warmup_epochs=1, losses=("batch_all",),
                                        init_noise=0.0))
    assert all(row["batch_all"] == 0.0 for row in decayed.trace)
    assert np.all(np.abs(decayed.table.embeddings) <= np.abs(X0))


def test_default_configuration_runs():
    ds = generate_synthetic_dataset(SyntheticSpec(40, 8, 32, seed=0))
    res = train_run(ds, TrainConfig(epochs=3, warmup_epochs=1))
    assert res.losses == DEFAULT_LOSSES
    assert len(res.trace) == 3 * (640 // 96)
    assert all(math.isfinite(r["total"]) for r in res.trace)


def test_determinism():
    ds = generate_synthetic_dataset(SyntheticSpec(12, 4, 8, seed=3))
    cfg = TrainConfig(spec=BatchSpec(3, 2), epochs=3, warmup_epochs=1, seed=9)
    a, b = train_run(ds, cfg), train_run(ds, cfg)
    assert a.trace_csv() == b.trace_csv()
    np.testing.assert_array_equal(a.table.embeddings, b.table.embeddings)
    np.testing.assert_array_equal(a.table.weights, b.table.weights)


@pytest.mark.parametrize("loss", LOSS_NAMES)
def test_one_step_descends(loss):
    """With a correct gradient, one small Adam step lowers the loss on the same batch."""
    spec = SyntheticSpec(8, 4, 6, identity_spread=0.5, modality_offset=1.0, noise=0.4, seed=1)
    ds = generate_synthetic_dataset(spec)
    cfg = TrainConfig(spec=BatchSpec(3, 2), base_lr=1e-4, weight_decay=0.0, schedule="constant",
                      losses=(loss,))
    for trial in range(20):
        rng = np.random.default_rng(trial)
        table = init_table(ds, cfg, rng)
        batch = sample_2pk(ds, cfg.spec, rng)
        batch = batch.with_embeddings(table.embeddings[batch.source])
        labels = batch.identities
        _, before, gX, gW = evaluate_losses(batch, table.weights, labels, cfg)
        assert before > 0
        X, _ = adam_step(batch.embeddings, gX, AdamState.zeros_like(gX), 1e-4)
        W, _ = adam_step(table.weights, gW, AdamState.zeros_like(gW), 1e-4)
        _, after, _, _ = evaluate_losses(batch.with_embeddings(X), W, labels, cfg)
        assert after < before


def test_trace_csv_header():
    ds = generate_synthetic_dataset(SyntheticSpec(12, 4, 8, seed=3))
    res = train_run(ds, TrainConfig(spec=BatchSpec(3, 2), epochs=2, warmup_epochs=1,
                                    losses=("batch_hard", "softmax")))
    lines = res.trace_csv().splitlines()
    assert lines[0] == "step,epoch,lr,batch_hard,softmax,total"
    assert len(lines) == 1 + len(res.trace)
