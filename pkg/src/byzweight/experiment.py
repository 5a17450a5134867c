"""Experiment grid: build the task once, run every cell, emit CSVs.

A cell is one (preprocess mode, aggregator, attack scenario) combination.
Cells share the same data, partition, and master seed, so any difference
between their metric files comes from the cell axes alone.  Each cell is
rebuilt from the serialized config inside its worker, which keeps parallel
runs byte-identical to sequential ones.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

from .config import ExperimentConfig, parse_config, serialize_config
from .engine import (
    Behavior,
    ClientSpec,
    RoundMetrics,
    TrainConfig,
    TrimmedMean,
    WeightedMean,
    WeightedMedian,
    run_training,
    stream,
    write_metrics_csv,
)
from .tasks import (
    OneHiddenMLP,
    PartitionSpec,
    SoftmaxRegression,
    generate_blobs,
    generate_partition,
    split_by_sizes,
)
from .weights import (
    Ignore,
    Passthrough,
    PreprocessInfeasible,
    Truncate,
    TruncationQuery,
)

# seed tags for task construction; the engine owns tags 1..5
_TAG_TRAIN_DATA = 101
_TAG_TEST_DATA = 102
_TAG_PARTITION = 103
_TAG_SPLIT = 104
_TAG_ATTACK = 105

SUMMARY_HEADER = "preprocess,aggregator,attack,final_accuracy"


def build_model(cfg: ExperimentConfig):
    if cfg.model_kind == "mlp":
        return OneHiddenMLP(cfg.dim, cfg.hidden, cfg.classes, cfg.dropout)
    return SoftmaxRegression(cfg.dim, cfg.classes)


def build_task(cfg: ExperimentConfig):
    """Training shards, their true sizes, and the held-out test set."""
    train = generate_blobs(
        cfg.train_samples,
        cfg.dim,
        cfg.classes,
        seed=(cfg.master_seed, _TAG_TRAIN_DATA),
        separation=cfg.separation,
    )
    test = generate_blobs(
        cfg.test_samples,
        cfg.dim,
        cfg.classes,
        seed=(cfg.master_seed, _TAG_TEST_DATA),
        separation=cfg.separation,
    )
    partition = generate_partition(
        PartitionSpec(
            cfg.train_samples,
            cfg.clients,
            mu=cfg.partition_mu,
            sigma=cfg.partition_sigma,
            seed=(cfg.master_seed, _TAG_PARTITION),
        )
    )
    sizes = partition.by_id()
    shards = split_by_sizes(
        train,
        [sizes[i] for i in range(cfg.clients)],
        seed=(cfg.master_seed, _TAG_SPLIT),
    )
    return shards, test


def attacker_ids(cfg: ExperimentConfig, scenario: str) -> frozenset[int]:
    if scenario == "none":
        return frozenset()
    if scenario.endswith("_single"):
        count = 1
    else:
        count = max(1, round(cfg.attacker_fraction * cfg.clients))
    rng = stream(cfg.master_seed, _TAG_ATTACK, count)
    return frozenset(rng.choice(cfg.clients, size=count, replace=False).tolist())


def build_clients(cfg: ExperimentConfig, scenario: str, shards) -> list[ClientSpec]:
    attackers = attacker_ids(cfg, scenario)
    if scenario.startswith("negation"):
        behavior = Behavior.MODEL_NEGATION
    elif scenario.startswith("label_shift"):
        behavior = Behavior.LABEL_SHIFT
    else:
        behavior = Behavior.HONEST
    declared_lie = (
        cfg.declared_single if scenario.endswith("_single") else cfg.declared_fraction
    )
    clients = []
    for cid, shard in enumerate(shards):
        if cid in attackers:
            clients.append(ClientSpec(cid, shard, declared_lie, behavior))
        else:
            clients.append(ClientSpec(cid, shard, len(shard)))
    return clients


def _preprocess_mode(cfg: ExperimentConfig, token: str):
    if token == "passthrough":
        return Passthrough()
    if token == "ignore":
        return Ignore()
    return Truncate(TruncationQuery(cfg.alpha, cfg.alpha_star))


def _aggregator(cfg: ExperimentConfig, token: str):
    if token == "mean":
        return WeightedMean()
    if token == "median":
        return WeightedMedian()
    return TrimmedMean(cfg.beta)


def metrics_filename(preprocess: str, aggregator: str, attack: str) -> str:
    return f"metrics_{preprocess}_{aggregator}_{attack}.csv"


@dataclass(frozen=True)
class CellResult:
    preprocess: str
    aggregator: str
    attack: str
    final_accuracy: float
    metrics: tuple[RoundMetrics, ...]


def run_cell(
    cfg: ExperimentConfig, preprocess: str, aggregator: str, attack: str
) -> CellResult:
    shards, test = build_task(cfg)
    clients = build_clients(cfg, attack, shards)
    model = build_model(cfg)
    train_cfg = TrainConfig(
        rounds=cfg.rounds,
        eta=cfg.eta,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        preprocess=_preprocess_mode(cfg, preprocess),
        aggregator=_aggregator(cfg, aggregator),
        clients_per_round=cfg.clients_per_round,
        honest_use_all_samples=cfg.honest_use_all_samples,
        master_seed=cfg.master_seed,
    )
    try:
        _, metrics = run_training(model, clients, test, train_cfg)
    except PreprocessInfeasible:
        # the cell is unrunnable, not the experiment: record it as empty
        return CellResult(preprocess, aggregator, attack, math.nan, ())
    final = metrics[-1].test_accuracy if metrics else math.nan
    return CellResult(preprocess, aggregator, attack, final, tuple(metrics))


def _run_cell_from_text(args: tuple[str, str, str, str]) -> CellResult:
    text, preprocess, aggregator, attack = args
    return run_cell(parse_config(text), preprocess, aggregator, attack)


def grid_cells(cfg: ExperimentConfig) -> list[tuple[str, str, str]]:
    return [
        (p, a, s)
        for p in cfg.preprocess_modes
        for a in cfg.aggregator_kinds
        for s in cfg.scenarios
    ]


def summary_csv(results: list[CellResult]) -> str:
    lines = [SUMMARY_HEADER]
    for r in results:
        lines.append(f"{r.preprocess},{r.aggregator},{r.attack},{r.final_accuracy!r}")
    return "\n".join(lines) + "\n"


def run_grid(
    cfg: ExperimentConfig, out_dir: Optional[str] = None, jobs: int = 1
) -> list[CellResult]:
    """Run every cell, write one metrics CSV each plus summary.csv."""
    out = out_dir if out_dir is not None else cfg.out_dir
    os.makedirs(out, exist_ok=True)
    cells = grid_cells(cfg)
    if jobs > 1:
        text = serialize_config(cfg)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(
                pool.map(_run_cell_from_text, [(text, p, a, s) for p, a, s in cells])
            )
    else:
        results = [run_cell(cfg, p, a, s) for p, a, s in cells]
    for r in results:
        write_metrics_csv(
            os.path.join(out, metrics_filename(r.preprocess, r.aggregator, r.attack)),
            r.metrics,
        )
    with open(os.path.join(out, "summary.csv"), "w", newline="") as fh:
        fh.write(summary_csv(results))
    return results
