"""Deterministic federated training with unreliable clients.

The server runs rounds of select / update / aggregate.  Every client ships a
declared sample count up front; the weight preprocessor runs once on those
declarations, and the resulting weights are what the aggregation rule sees.
Attackers either negate the server model each round or train on flipped
labels.  All randomness is drawn from streams keyed on
(master_seed, purpose, round, client), so results are bit-identical no matter
how client work is scheduled.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .tasks import Dataset, accuracy
from .weights import PreprocessMode, WeightVector, preprocess


class EmptyClientData(ValueError):
    pass


class WeightSumZero(ValueError):
    pass


class AllMassTrimmed(ValueError):
    pass


# stream purposes; never reuse a tag for a second purpose
_TAG_INIT = 1
_TAG_SELECT = 2
_TAG_SHUFFLE = 3
_TAG_DROPOUT = 4
_TAG_SUBSET = 5


def stream(*keys: int) -> np.random.Generator:
    """A fresh generator keyed on a tuple of integers."""
    return np.random.default_rng(tuple(int(k) for k in keys))


class Behavior(enum.Enum):
    HONEST = "honest"
    MODEL_NEGATION = "model_negation"
    LABEL_SHIFT = "label_shift"


@dataclass
class ClientSpec:
    """One participant: its real data, its claimed size, and how it acts."""

    id: int
    data: Dataset
    declared_size: int
    behavior: Behavior = Behavior.HONEST

    def __post_init__(self) -> None:
        if len(self.data) == 0:
            raise EmptyClientData(f"client {self.id} holds no samples")
        if self.declared_size < 1:
            raise ValueError("declared_size must be a positive integer")
        # honest clients report their true size; only attackers may lie
        if self.behavior is Behavior.HONEST and self.declared_size != len(self.data):
            raise ValueError(
                f"honest client {self.id} declares {self.declared_size} "
                f"but holds {len(self.data)}"
            )


@dataclass(frozen=True)
class WeightedMean:
    pass


@dataclass(frozen=True)
class WeightedMedian:
    pass


@dataclass(frozen=True)
class TrimmedMean:
    beta: float

    def __post_init__(self) -> None:
        if not 0 <= self.beta < 0.5:
            raise ValueError(f"beta must lie in [0, 1/2), got {self.beta}")


Aggregator = Union[WeightedMean, WeightedMedian, TrimmedMean]


@dataclass
class TrainConfig:
    """Server-side knobs; batch_size is an absolute count, or a fraction of
    each client's usable samples when given as a float in (0, 1]."""

    rounds: int
    eta: float
    epochs: int
    batch_size: Union[int, float]
    preprocess: PreprocessMode
    aggregator: Aggregator
    clients_per_round: Optional[Union[int, float]] = None
    honest_use_all_samples: bool = True
    master_seed: int = 0

    def __post_init__(self) -> None:
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if isinstance(self.batch_size, float):
            if not 0 < self.batch_size <= 1:
                raise ValueError("fractional batch_size must lie in (0, 1]")
        elif self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    test_accuracy: float
    test_loss: float
    aggregate_norm: float
    finite: bool = True


METRICS_CSV_HEADER = "round,test_accuracy,test_loss,aggregate_norm"


def metrics_to_csv(records: Sequence[RoundMetrics]) -> str:
    lines = [METRICS_CSV_HEADER]
    for r in records:
        lines.append(
            f"{r.round},{r.test_accuracy!r},{r.test_loss!r},{r.aggregate_norm!r}"
        )
    return "\n".join(lines) + "\n"


def write_metrics_csv(path, records: Sequence[RoundMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(metrics_to_csv(records))


def byzantine_update(behavior: Behavior, w_server: np.ndarray) -> np.ndarray:
    if behavior is not Behavior.MODEL_NEGATION:
        raise ValueError("only model-negation attackers use this update")
    return -w_server


def _usable_data(client: ClientSpec, cfg: TrainConfig, effective_size: Optional[int]) -> Dataset:
    data = client.data
    if not cfg.honest_use_all_samples and effective_size is not None:
        keep = min(effective_size, len(data))
        if keep < len(data):
            # fixed per-client subset, stable across rounds
            rng = stream(cfg.master_seed, _TAG_SUBSET, client.id)
            idx = rng.permutation(len(data))[:keep]
            data = data.subset(np.sort(idx))
    return data


def client_update(
    model,
    w: np.ndarray,
    client: ClientSpec,
    cfg: TrainConfig,
    round_index: int,
    effective_size: Optional[int] = None,
) -> np.ndarray:
    """Local mini-batch SGD for one round on one client.

    Runs cfg.epochs passes over the client's usable samples; a short final
    batch of r samples steps with its gradient scaled by r/batch_size, so
    every sample contributes 1/batch_size of its gradient exactly once per
    epoch.  Label-shift attackers remap y to (classes-1)-y and then train
    like anyone else.
    """
    if client.behavior is Behavior.MODEL_NEGATION:
        raise ValueError("model-negation attackers do not run local training")
    data = _usable_data(client, cfg, effective_size)
    if client.behavior is Behavior.LABEL_SHIFT:
        data = Dataset(data.features, (model.classes - 1) - data.labels)
    shuffle_rng = stream(cfg.master_seed, _TAG_SHUFFLE, round_index, client.id)
    dropout_rng = stream(cfg.master_seed, _TAG_DROPOUT, round_index, client.id)
    n, b = len(data), cfg.batch_size
    if isinstance(b, float):
        b = max(1, math.ceil(b * n))
    w = np.array(w, dtype=float)
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, b):
            chunk = order[start : start + b]
            grad = model.gradient(w, data.subset(chunk), dropout_rng)
            w = w - cfg.eta * (len(chunk) / b) * grad
    return w


def _as_arrays(updates: Sequence[np.ndarray], weights: Sequence[float]):
    if len(updates) == 0 or len(updates) != len(weights):
        raise ValueError("need equally many updates and weights, at least one")
    u = np.stack([np.asarray(x, dtype=float) for x in updates])
    wt = np.asarray(weights, dtype=float)
    if np.any(wt < 0):
        raise ValueError("weights must be non-negative")
    return u, wt


def aggregate_weighted_mean(
    updates: Sequence[np.ndarray], weights: Sequence[float]
) -> np.ndarray:
    u, wt = _as_arrays(updates, weights)
    total = wt.sum()
    if total <= 0:
        raise WeightSumZero("total aggregation weight is zero")
    return (wt[:, None] * u).sum(axis=0) / total


def aggregate_weighted_median(
    updates: Sequence[np.ndarray], weights: Sequence[float]
) -> np.ndarray:
    """Coordinatewise weighted lower median.

    Per coordinate: the smallest value whose cumulative weight, over values
    sorted ascending, reaches half the total.
    """
    u, wt = _as_arrays(updates, weights)
    total = wt.sum()
    if total <= 0:
        raise WeightSumZero("total aggregation weight is zero")
    order = np.argsort(u, axis=0, kind="stable")
    ranked = np.take_along_axis(u, order, axis=0)
    cum = np.cumsum(wt[order], axis=0)
    pick = (cum >= total / 2).argmax(axis=0)
    return np.take_along_axis(ranked, pick[None, :], axis=0)[0]


def aggregate_trimmed_mean(
    updates: Sequence[np.ndarray], weights: Sequence[float], beta: float
) -> np.ndarray:
    """Coordinatewise mean after trimming beta of the weight mass per tail.

    A client straddling a trim boundary keeps only the fraction of its
    weight inside the surviving band, so the trimmed mass is exactly
    beta * total on each side.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if beta >= 0.5:
        raise AllMassTrimmed(f"beta={beta} leaves no surviving weight mass")
    u, wt = _as_arrays(updates, weights)
    total = wt.sum()
    if total <= 0:
        raise WeightSumZero("total aggregation weight is zero")
    order = np.argsort(u, axis=0, kind="stable")
    ranked = np.take_along_axis(u, order, axis=0)
    cum = np.cumsum(wt[order], axis=0)
    lo, hi = beta * total, (1 - beta) * total
    upper = np.minimum(cum, hi)
    lower = np.maximum(cum - wt[order], lo)
    surviving = np.clip(upper - lower, 0.0, None)
    return (surviving * ranked).sum(axis=0) / (total - 2 * beta * total)


def aggregate(
    kind: Aggregator, updates: Sequence[np.ndarray], weights: Sequence[float]
) -> np.ndarray:
    if isinstance(kind, WeightedMean):
        return aggregate_weighted_mean(updates, weights)
    if isinstance(kind, WeightedMedian):
        return aggregate_weighted_median(updates, weights)
    if isinstance(kind, TrimmedMean):
        return aggregate_trimmed_mean(updates, weights, kind.beta)
    raise TypeError(f"unknown aggregator {kind!r}")


def select_clients(
    round_index: int,
    population: int,
    clients_per_round: Optional[Union[int, float]],
    master_seed: int,
) -> tuple[int, ...]:
    """Ids participating this round, ascending; uniform without replacement."""
    if clients_per_round is None:
        return tuple(range(population))
    m = clients_per_round
    if isinstance(m, float):
        if not 0 < m <= 1:
            raise ValueError("fractional participation must lie in (0, 1]")
        m = math.ceil(m * population)
    if not 1 <= m <= population:
        raise ValueError(f"clients_per_round {m} outside [1, {population}]")
    if m == population:
        return tuple(range(population))
    rng = stream(master_seed, _TAG_SELECT, round_index)
    return tuple(sorted(rng.choice(population, size=m, replace=False).tolist()))


def run_training(
    model,
    clients: Sequence[ClientSpec],
    testset: Dataset,
    cfg: TrainConfig,
    on_aggregate: Optional[Callable[[int, tuple[int, ...], tuple[int, ...]], None]] = None,
) -> tuple[np.ndarray, list[RoundMetrics]]:
    """The full training loop; returns final parameters and per-round metrics.

    Declared sizes are collected and preprocessed once, before any round
    runs.  Within a round, updates are computed independently per client and
    aggregated in ascending client id.  If aggregation ever produces a
    non-finite parameter, the run stops with a final record flagged
    non-finite.  on_aggregate, when given, observes each round's
    (round, selected ids, weights as used) before the model moves.
    """
    clients = sorted(clients, key=lambda c: c.id)
    ids = [c.id for c in clients]
    if ids != sorted(set(ids)):
        raise ValueError("client ids must be distinct")
    if ids != list(range(len(clients))):
        raise ValueError("client ids must be 0..K-1")
    declared = WeightVector.from_values([c.declared_size for c in clients], ids)
    weight_of = preprocess(declared, cfg.preprocess).by_id()

    w = model.init_params(stream(cfg.master_seed, _TAG_INIT))
    metrics: list[RoundMetrics] = []
    for t in range(1, cfg.rounds + 1):
        selected = select_clients(t, len(clients), cfg.clients_per_round, cfg.master_seed)
        updates, weights = [], []
        for cid in selected:
            client = clients[cid]
            if client.behavior is Behavior.MODEL_NEGATION:
                updates.append(byzantine_update(client.behavior, w))
            else:
                updates.append(
                    client_update(model, w, client, cfg, t, effective_size=weight_of[cid])
                )
            weights.append(weight_of[cid])
        if on_aggregate is not None:
            on_aggregate(t, selected, tuple(weights))
        w = aggregate(cfg.aggregator, updates, weights)
        norm = float(np.linalg.norm(w))
        if not np.all(np.isfinite(w)):
            metrics.append(RoundMetrics(t, math.nan, math.nan, norm, finite=False))
            break
        metrics.append(
            RoundMetrics(
                t,
                accuracy(model, w, testset),
                model.loss(w, testset),
                norm,
            )
        )
    return w, metrics
