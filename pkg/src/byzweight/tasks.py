"""Synthetic classification task, client data partitioning, and models.

The task is deliberately small: Gaussian blobs with one scaled basis vector
per class, split across clients by a heavy-tailed lognormal partition that
mirrors real federated deployments (many tiny clients, a few huge ones).
Two models train on it, a softmax linear classifier and a one-hidden-layer
ReLU network with dropout; both expose analytic gradients so the trainer
needs no autodiff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .weights import WeightVector


class InfeasibleTotal(ValueError):
    """Cannot give every client at least one sample."""


class SizeMismatch(ValueError):
    """Partition sizes and dataset rows disagree."""


@dataclass(frozen=True)
class PartitionSpec:
    total_samples: int
    clients: int
    mu: float = 1.5
    sigma: float = 3.45
    seed: int = 0


def _largest_remainder(raw: np.ndarray, total: int, floor: int) -> list[int]:
    # floor goes to everyone first; the spare mass is split proportionally,
    # fractional parts resolved largest-first (stable on ties)
    k = len(raw)
    spare = total - floor * k
    share = raw / raw.sum() * spare
    base = np.floor(share).astype(np.int64)
    remainder = share - base
    missing = spare - int(base.sum())
    order = np.argsort(-remainder, kind="stable")
    base[order[:missing]] += 1
    return [floor + int(b) for b in base]


def generate_partition(spec: PartitionSpec) -> WeightVector:
    """Lognormal client sizes scaled to sum exactly to the sample budget.

    Every client receives at least one sample; the result is sorted with the
    pre-sort draw order kept as ids.
    """
    if spec.clients < 1:
        raise ValueError("need at least one client")
    if spec.total_samples < spec.clients:
        raise InfeasibleTotal(
            f"{spec.total_samples} samples cannot cover {spec.clients} clients"
        )
    rng = np.random.default_rng(spec.seed)
    raw = rng.lognormal(spec.mu, spec.sigma, spec.clients)
    sizes = _largest_remainder(raw, spec.total_samples, floor=1)
    return WeightVector.from_values(sizes)


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must align with feature rows")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx])

    def to_csv(self) -> str:
        header = ",".join(f"feature_{j}" for j in range(self.dim)) + ",label"
        lines = [header]
        for row, label in zip(self.features, self.labels):
            lines.append(",".join(repr(float(x)) for x in row) + f",{int(label)}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _class_means(dim: int, classes: int, separation: float) -> np.ndarray:
    if classes > dim:
        raise ValueError("class means use one basis direction each; need classes <= dim")
    means = np.zeros((classes, dim))
    means[np.arange(classes), np.arange(classes)] = separation
    return means


def generate_blobs(
    n: int, dim: int, classes: int, seed, separation: float = 4.0
) -> Dataset:
    """Gaussian blobs with unit isotropic noise and equal class priors.

    Class c sits at separation * e_c, so any two means are separation*sqrt(2)
    apart; labels are drawn uniformly.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, size=n)
    means = _class_means(dim, classes, separation)
    features = means[labels] + rng.standard_normal((n, dim))
    return Dataset(features, labels)


def split_by_sizes(ds: Dataset, sizes, seed) -> list[Dataset]:
    """Shuffle rows once, then hand out contiguous runs of the given sizes."""
    if isinstance(sizes, WeightVector):
        size_list = list(sizes.values)
    else:
        size_list = [int(s) for s in sizes]
    if sum(size_list) != len(ds):
        raise SizeMismatch(
            f"sizes sum to {sum(size_list)} but the dataset holds {len(ds)} rows"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ds))
    shards = []
    start = 0
    for size in size_list:
        shards.append(ds.subset(perm[start : start + size]))
        start += size
    return shards


# ------------------------------------------------------------------- models


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def _check_batch(model, batch: Dataset) -> None:
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    if batch.dim != model.dim:
        raise ValueError(f"batch dimension {batch.dim} != model dimension {model.dim}")


@dataclass(frozen=True)
class SoftmaxRegression:
    """Linear classifier trained with cross-entropy."""

    dim: int
    classes: int

    @property
    def param_count(self) -> int:
        return self.dim * self.classes + self.classes

    def init_params(self, rng=None) -> np.ndarray:
        return np.zeros(self.param_count)

    def _unpack(self, w: np.ndarray):
        split = self.dim * self.classes
        return w[:split].reshape(self.dim, self.classes), w[split:]

    def _logits(self, w: np.ndarray, features: np.ndarray) -> np.ndarray:
        weight, bias = self._unpack(w)
        return features @ weight + bias

    def loss(self, w, batch: Dataset, dropout_rng=None) -> float:
        _check_batch(self, batch)
        logp = _log_softmax(self._logits(w, batch.features))
        return float(-logp[np.arange(len(batch)), batch.labels].mean())

    def gradient(self, w, batch: Dataset, dropout_rng=None) -> np.ndarray:
        _check_batch(self, batch)
        n = len(batch)
        scores = _softmax(self._logits(w, batch.features))
        scores[np.arange(n), batch.labels] -= 1.0
        scores /= n
        grad_w = batch.features.T @ scores
        grad_b = scores.sum(axis=0)
        return np.concatenate([grad_w.ravel(), grad_b])

    def predict(self, w, features: np.ndarray) -> np.ndarray:
        return self._logits(w, features).argmax(axis=1)


@dataclass(frozen=True)
class OneHiddenMLP:
    """One hidden ReLU layer with classic dropout.

    Training mode multiplies hidden activations by a Bernoulli keep mask
    drawn from the supplied stream; evaluation mode runs the deterministic
    network with activations scaled by the keep probability.  A paired
    loss/gradient evaluation shares a mask by receiving equal-state streams.
    """

    dim: int
    hidden: int
    classes: int
    dropout_rate: float = 0.2

    def __post_init__(self) -> None:
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def param_count(self) -> int:
        return self.dim * self.hidden + self.hidden + self.hidden * self.classes + self.classes

    def init_params(self, rng=None) -> np.ndarray:
        if rng is None:
            raise ValueError("hidden-layer init needs a randomness stream")
        w1 = rng.standard_normal((self.dim, self.hidden)) * math.sqrt(2.0 / self.dim)
        w2 = rng.standard_normal((self.hidden, self.classes)) * math.sqrt(2.0 / self.hidden)
        return np.concatenate(
            [w1.ravel(), np.zeros(self.hidden), w2.ravel(), np.zeros(self.classes)]
        )

    def _unpack(self, w: np.ndarray):
        d, h, c = self.dim, self.hidden, self.classes
        off = 0
        w1 = w[off : off + d * h].reshape(d, h)
        off += d * h
        b1 = w[off : off + h]
        off += h
        w2 = w[off : off + h * c].reshape(h, c)
        off += h * c
        b2 = w[off:]
        return w1, b1, w2, b2

    def _forward(self, w, features, dropout_rng):
        w1, b1, w2, b2 = self._unpack(w)
        pre = features @ w1 + b1
        act = np.maximum(pre, 0.0)
        if dropout_rng is not None:
            mask = dropout_rng.random(act.shape) >= self.dropout_rate
            hidden = act * mask
        else:
            mask = None
            hidden = act * (1.0 - self.dropout_rate)
        logits = hidden @ w2 + b2
        return pre, act, mask, hidden, logits

    def loss(self, w, batch: Dataset, dropout_rng=None) -> float:
        _check_batch(self, batch)
        logits = self._forward(w, batch.features, dropout_rng)[-1]
        logp = _log_softmax(logits)
        return float(-logp[np.arange(len(batch)), batch.labels].mean())

    def gradient(self, w, batch: Dataset, dropout_rng=None) -> np.ndarray:
        _check_batch(self, batch)
        n = len(batch)
        w1, b1, w2, b2 = self._unpack(w)
        pre, act, mask, hidden, logits = self._forward(w, batch.features, dropout_rng)
        scores = _softmax(logits)
        scores[np.arange(n), batch.labels] -= 1.0
        scores /= n
        grad_w2 = hidden.T @ scores
        grad_b2 = scores.sum(axis=0)
        grad_hidden = scores @ w2.T
        if mask is not None:
            grad_act = grad_hidden * mask
        else:
            grad_act = grad_hidden * (1.0 - self.dropout_rate)
        grad_pre = grad_act * (pre > 0)
        grad_w1 = batch.features.T @ grad_pre
        grad_b1 = grad_pre.sum(axis=0)
        return np.concatenate(
            [grad_w1.ravel(), grad_b1, grad_w2.ravel(), grad_b2]
        )

    def predict(self, w, features: np.ndarray) -> np.ndarray:
        return self._forward(w, features, None)[-1].argmax(axis=1)


Model = Union[SoftmaxRegression, OneHiddenMLP]


def loss(model: Model, w, batch: Dataset, dropout_rng=None) -> float:
    return model.loss(w, batch, dropout_rng)


def gradient(model: Model, w, batch: Dataset, dropout_rng=None) -> np.ndarray:
    return model.gradient(w, batch, dropout_rng)


def accuracy(model: Model, w, ds: Dataset) -> float:
    return float((model.predict(w, ds.features) == ds.labels).mean())


def client_objective(model: Model, w, shard: Dataset) -> float:
    """Mean evaluation-mode loss over one client's samples."""
    return model.loss(w, shard, dropout_rng=None)


def objective_gap(
    model: Model,
    w,
    shards: Sequence[Dataset],
    declared,
    cap: int,
) -> tuple[float, float]:
    """Actual and bounded change of the weighted objective under capping.

    Compares the declared-weighted mean of client objectives against the
    capped-weighted one (lhs) and evaluates the computable bound (rhs):
    clients over the cap contribute their objective scaled by the weight
    mass they lose relative to uniform, clients at or below it contribute
    their total per-sample loss scaled by the normalizer shift.  With the
    cap at or above every declared count both sides are exactly zero.
    """
    if isinstance(declared, WeightVector):
        declared_list = list(declared.values)
    else:
        declared_list = [int(x) for x in declared]
    if len(declared_list) != len(shards):
        raise SizeMismatch(
            f"{len(declared_list)} declared counts for {len(shards)} shards"
        )
    if cap < 1:
        raise ValueError("cap must be positive")
    k = len(shards)
    capped = [min(x, cap) for x in declared_list]
    declared_total = sum(declared_list)
    capped_total = sum(capped)
    if declared_total == 0 or capped_total == 0:
        raise ValueError("declared counts must carry positive total weight")
    objectives = [client_objective(model, w, shard) for shard in shards]
    declared_mean = sum(d * f for d, f in zip(declared_list, objectives)) / declared_total
    capped_mean = sum(c * f for c, f in zip(capped, objectives)) / capped_total
    lhs = abs(declared_mean - capped_mean)
    over = sum(
        (d / declared_total - 1.0 / k) * f
        for d, f in zip(declared_list, objectives)
        if d > cap
    )
    under_loss_total = sum(
        len(shard) * f
        for d, shard, f in zip(declared_list, shards, objectives)
        if d <= cap
    )
    rhs = abs(over + (1.0 / declared_total - 1.0 / capped_total) * under_loss_total)
    return lhs, rhs
