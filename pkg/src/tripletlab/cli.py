"""Run loss-combination grids on synthetic data from a JSON config.

Usage::

    tripletlab --config experiment.json [--out DIR] [--seed N]
    tripletlab --selftest

Exit codes: 0 success, 1 selftest failure, 2 invalid config, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .batch import BatchSpec, Modality
from .numkit import ZeroNormError
from .retrieval import evaluate
from .selftest import run_selftest
from .train import LOSS_NAMES, SyntheticSpec, TrainConfig, generate_synthetic_dataset, train_run

log = logging.getLogger("tripletlab")

EXIT_OK, EXIT_SELFTEST, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    synthetic: SyntheticSpec
    train: TrainConfig
    grid: list[tuple[str, ...]]
    shot: str
    trials: int
    eval_seed: int
    output_dir: Path | None


_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"spec", "losses"} | {"P", "K"}
_EVAL_KEYS = {"shot", "trials", "seed"}
_TOP_KEYS = {"synthetic", "train", "grid", "evaluation", "output_dir"}


def _section(doc: dict, key: str, allowed: set[str]) -> dict:
    part = doc.get(key, {})
    if not isinstance(part, dict):
        raise ConfigError(f"{key}: expected an object")
    extra = sorted(set(part) - allowed)
    if extra:
        raise ConfigError(f"{key}.{extra[0]}: unknown field")
    return part


def _build(key: str, factory, kwargs: dict):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _grid_cells(raw) -> list[tuple[str, ...]]:
    """Cartesian product of the axes; an axis entry is a loss name, a list of names, or null."""
    if not isinstance(raw, list) or not raw:
        raise ConfigError("grid: expected a non-empty list of axes")
    axes = []
    for a, axis in enumerate(raw):
        if not isinstance(axis, list) or not axis:
            raise ConfigError(f"grid[{a}]: expected a non-empty list of choices")
        choices = []
        for c, entry in enumerate(axis):
            names = [] if entry is None else [entry] if isinstance(entry, str) else entry
            if not isinstance(names, list):
                raise ConfigError(f"grid[{a}][{c}]: expected a loss name, a list of names, or null")
            for n in names:
                if n not in LOSS_NAMES:
                    raise ConfigError(f"grid[{a}][{c}]: unknown loss {n!r}")
            choices.append(tuple(names))
        axes.append(choices)
    cells = []
    for combo in itertools.product(*axes):
        names = tuple(dict.fromkeys(n for part in combo for n in part))
        if not names:
            raise ConfigError("grid: a cell selects no loss")
        cells.append(names)
    return cells


def parse_config(doc: dict, seed: int | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    extra = sorted(set(doc) - _TOP_KEYS)
    if extra:
        raise ConfigError(f"{extra[0]}: unknown field")
    syn = dict(_section(doc, "synthetic", {f.name for f in fields(SyntheticSpec)}))
    tr = dict(_section(doc, "train", _TRAIN_KEYS))
    ev = dict(_section(doc, "evaluation", _EVAL_KEYS))
    if seed is not None:
        syn["seed"] = tr["seed"] = ev["seed"] = seed

    synthetic = _build("synthetic", SyntheticSpec, syn)
    spec = _build("train", BatchSpec, {"P": tr.pop("P", 6), "K": tr.pop("K", 8)})
    cells = _grid_cells(doc.get("grid", [["unified_batch_all"], ["cosine_softmax"], ["ba_hetero_center"]]))
    train = _build("train", TrainConfig, {"spec": spec, "losses": cells[0], **tr})
    for cell in cells[1:]:
        _build("train", TrainConfig, {"spec": spec, "losses": cell, **tr})

    if synthetic.identities < spec.P:
        raise ConfigError(f"train.P: {spec.P} exceeds synthetic.identities={synthetic.identities}")
    if synthetic.samples_per_modality < spec.K:
        raise ConfigError(f"train.K: {spec.K} exceeds synthetic.samples_per_modality="
                          f"{synthetic.samples_per_modality}")
    if 2 * synthetic.identities * synthetic.samples_per_modality < spec.size:
        raise ConfigError("synthetic: dataset is smaller than one 2PK batch")

    shot = ev.get("shot", "single")
    if shot not in ("single", "multi"):
        raise ConfigError(f"evaluation.shot: expected 'single' or 'multi', got {shot!r}")
    trials = ev.get("trials", 10)
    if not isinstance(trials, int) or trials < 1:
        raise ConfigError("evaluation.trials: expected a positive integer")
    eval_seed = ev.get("seed", 0)
    if not isinstance(eval_seed, int) or eval_seed < 0:
        raise ConfigError("evaluation.seed: expected a non-negative integer")
    out = doc.get("output_dir")
    return ExperimentConfig(synthetic, train, cells, shot, trials, eval_seed,
                            Path(out) if out is not None else None)


def _cell_dir_name(k: int, losses: tuple[str, ...]) -> str:
    return f"{k:02d}_{'+'.join(losses)}"


def run_experiment(cfg: ExperimentConfig, out_dir: Path) -> list[dict]:
    """Train and evaluate every grid cell; write per-cell artifacts and summary.csv."""
    dataset = generate_synthetic_dataset(cfg.synthetic)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, losses in enumerate(cfg.grid):
        train_cfg = TrainConfig(**{**{f.name: getattr(cfg.train, f.name) for f in fields(TrainConfig)},
                                   "losses": losses})
        log.info("cell %d: %s", k, " + ".join(losses))
        result = train_run(dataset, train_cfg)
        samples = result.table.samples(dataset)
        queries = [s for s in samples if s.modality == Modality.INFRARED]
        gallery = [s for s in samples if s.modality == Modality.VISIBLE]
        report = evaluate(queries, gallery, cfg.shot, cfg.trials, np.random.default_rng(cfg.eval_seed))
        if not np.isfinite(report.map):
            raise FloatingPointError(f"non-finite mAP in cell {k}")

        cell_dir = out_dir / _cell_dir_name(k, losses)
        cell_dir.mkdir(exist_ok=True)
        (cell_dir / "trace.csv").write_text(result.trace_csv(), encoding="utf-8")
        doc = report.to_dict()
        doc.update({"losses": list(losses), "trials": report.protocol["trials"], "seed": cfg.eval_seed})
        (cell_dir / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                                              encoding="utf-8")
        rows.append({"cell": k, "losses": "+".join(losses), "rank1": report.rank(1),
                     "rank10": report.rank(10), "map": report.map})

    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "losses", "rank1", "rank10", "map"])
        for r in rows:
            w.writerow([r["cell"], r["losses"], f"{r['rank1']:.6f}", f"{r['rank10']:.6f}", f"{r['map']:.6f}"])
    return rows


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="tripletlab", description=__doc__.splitlines()[0])
    parser.add_argument("--config", type=Path, help="experiment JSON config")
    parser.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, help="override every seed in the config")
    parser.add_argument("--selftest", action="store_true", help="run oracle and gradient checks")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")

    if args.selftest:
        return run_selftest()
    if args.config is None:
        parser.print_usage(sys.stderr)
        print("error: --config is required unless --selftest is given", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None and args.seed < 0:
        print("config error: --seed: expected a non-negative integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        doc = json.loads(args.config.read_text(encoding="utf-8"))
        cfg = parse_config(doc, seed=args.seed)
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"config error: invalid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = args.out or cfg.output_dir
    if out_dir is None:
        print("config error: output_dir: missing (or pass --out)", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            rows = run_experiment(cfg, out_dir)
    except (FloatingPointError, ZeroNormError, OverflowError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for r in rows:
        print(f"{r['losses']}: rank1={r['rank1']:.4f} rank10={r['rank10']:.4f} mAP={r['map']:.4f}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
