"""Exact-arithmetic preprocessing of client-declared sample counts.

A federation of K clients reports integer sample counts.  A coalition of up
to an ``alpha`` fraction of clients may lie, so the aggregation weight any
small group can hold must be limited: the combined share of the largest
``alpha``-fraction of clients has to stay at or below ``alpha_star``.  The
cheapest repair (in L1 distance) is capping every count at a common bound.
This module computes that bound exactly with rational arithmetic, along with
the full trade-off between assumed coalition size and the resulting cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union


class ZeroTotalWeight(ValueError):
    """A weight vector with zero total cannot be given shares."""


class DegenerateInterval(ValueError):
    """The share constraint cannot bind inside the requested interval."""


class PreprocessInfeasible(ValueError):
    """No cap makes the declared counts satisfy the share limit."""


def as_fraction(x: Union[Fraction, int, float, str]) -> Fraction:
    """Coerce to an exact Fraction.

    Floats are converted through their shortest decimal repr, so 0.3 means
    3/10 rather than the underlying binary value.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(str(x))
    if isinstance(x, str):
        return Fraction(x)
    raise TypeError(f"cannot interpret {x!r} as an exact fraction")


@dataclass(frozen=True)
class WeightVector:
    """Client weights sorted non-decreasing, with client ids kept aligned."""

    values: tuple[int, ...]
    ids: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.values) == 0:
            raise ValueError("weight vector must hold at least one client")
        if len(self.ids) != len(self.values):
            raise ValueError("ids and values must have equal length")
        for x in self.values:
            if not isinstance(x, int) or x < 0:
                raise ValueError(f"weights must be non-negative integers, got {x!r}")
        if any(a > b for a, b in zip(self.values, self.values[1:])):
            raise ValueError("values must be sorted non-decreasing")

    @classmethod
    def from_values(cls, values: Iterable[int], ids: Iterable[int] | None = None) -> "WeightVector":
        vals = list(values)
        if ids is None:
            ids = range(len(vals))
        pairs = sorted(zip(vals, ids), key=lambda p: p[0])  # stable: ties keep input order
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def total(self) -> int:
        return sum(self.values)

    def by_id(self) -> dict[int, int]:
        return dict(zip(self.ids, self.values))


@dataclass(frozen=True)
class TruncationQuery:
    """Assumed lying-client fraction and the share limit to enforce."""

    alpha: Fraction
    alpha_star: Fraction

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", as_fraction(self.alpha))
        object.__setattr__(self, "alpha_star", as_fraction(self.alpha_star))
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0 < self.alpha_star < 1:
            raise ValueError(f"alpha_star must lie in (0, 1), got {self.alpha_star}")


class TruncationStatus:
    SOLVED = "solved"
    NO_TRUNCATION_NEEDED = "no_truncation_needed"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class TruncationOutcome:
    """Result of solving for the largest admissible cap."""

    status: str
    cap: int | None = None
    achieved_share: Fraction | None = None


@dataclass(frozen=True)
class TradeoffCurve:
    """Feasible (alpha, cap) pairs, alpha strictly decreasing."""

    pairs: tuple[tuple[Fraction, int], ...]

    def to_csv(self) -> str:
        lines = ["alpha,u_star"]
        for alpha, cap in self.pairs:
            lines.append(f"{float(alpha):.6f},{cap}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def top_share(v: WeightVector, fraction: Union[Fraction, int, float, str]) -> Fraction:
    """Share of total weight held by the top `fraction` of clients.

    The count of clients in the top group is exact: client i (1-based, sorted
    ascending) belongs iff i > (1 - fraction) * K.
    """
    p = as_fraction(fraction)
    if not 0 <= p <= 1:
        raise ValueError(f"fraction must lie in [0, 1], got {p}")
    total = sum(v.values)
    if total == 0:
        raise ZeroTotalWeight("cannot compute shares of an all-zero weight vector")
    k = len(v)
    m = k - math.floor((1 - p) * k)  # members of the top group
    top = sum(v.values[k - m:]) if m > 0 else 0
    return Fraction(top, total)


def truncate(v: WeightVector, cap: int) -> WeightVector:
    """Cap every weight at `cap` (order and ids preserved)."""
    if cap < 0:
        raise ValueError("cap must be non-negative")
    return WeightVector(tuple(min(x, cap) for x in v.values), v.ids)


def _window_sums(v: WeightVector, u: int, alpha: Fraction) -> tuple[int, int, int, int]:
    """Coefficients (a, b, c, d) of the capped top share on interval u.

    For caps between the u-th and (u+1)-th smallest weights the share equals
    (a + b*cap) / (c + d*cap): a is the weight of top-group clients at or
    below index u, b counts clients above both u and the top-group boundary,
    c is the weight at or below u, d counts clients above u.
    """
    k = len(v)
    lo = math.floor((1 - alpha) * k)  # top group is 1-based indices > lo
    a = sum(v.values[lo:u]) if lo < u else 0
    b = k - max(u, lo)
    c = sum(v.values[:u])
    d = k - u
    return a, b, c, d


def interval_solve(v: WeightVector, u: int, query: TruncationQuery) -> int:
    """Largest integer cap within interval u meeting the share limit.

    `u` is 1-based; the interval covers caps between the u-th and (u+1)-th
    smallest weights.  Raises DegenerateInterval when the share constraint
    cannot bind there (the capped share never crosses the limit from below),
    which happens exactly when d*alpha_star - b is non-negative.
    """
    k = len(v)
    if not 1 <= u <= k - 1:
        raise ValueError(f"interval index must lie in [1, {k - 1}], got {u}")
    a, b, c, d = _window_sums(v, u, query.alpha)
    limit = query.alpha_star
    denom = d * limit - b
    if denom >= 0:
        raise DegenerateInterval(
            f"share constraint cannot bind on interval {u} (d*limit - b = {denom})"
        )
    return math.floor((a - c * limit) / denom)


def solve_truncation(v: WeightVector, query: TruncationQuery) -> TruncationOutcome:
    """Largest cap whose application brings the top share within the limit.

    Returns NO_TRUNCATION_NEEDED when the raw vector already satisfies the
    limit, INFEASIBLE when even flattening every weight to the smallest
    positive level fails, and otherwise the exact maximal cap together with
    the share it achieves.
    """
    alpha, limit = query.alpha, query.alpha_star
    share = top_share(v, alpha)
    if share <= limit:
        return TruncationOutcome(TruncationStatus.NO_TRUNCATION_NEEDED, None, share)
    floor_cap = max(1, v.values[0])
    if top_share(truncate(v, floor_cap), alpha) > limit:
        return TruncationOutcome(TruncationStatus.INFEASIBLE)
    k = len(v)
    for u in range(k - 1, 0, -1):
        cap_lo = max(1, v.values[u - 1])
        if top_share(truncate(v, cap_lo), alpha) <= limit:
            cap = interval_solve(v, u, query)
            achieved = top_share(truncate(v, cap), alpha)
            return TruncationOutcome(TruncationStatus.SOLVED, cap, achieved)
    raise AssertionError("unreachable: flattening satisfied the limit but no interval did")


def tradeoff_curve(v: WeightVector, alpha_star: Union[Fraction, int, float, str]) -> TradeoffCurve:
    """All feasible (alpha, cap) pairs for alpha on the 1/K grid.

    Walks alpha downward from the largest feasible grid point, one fewer
    tolerated lying client per step, while the cap pointer only moves upward;
    with precomputed prefix sums the whole sweep costs O(K) beyond the sort.
    Grid points where no cap can meet the limit are skipped; the sweep stops
    once the raw vector satisfies the limit on its own.
    """
    limit = as_fraction(alpha_star)
    if not 0 < limit < 1:
        raise ValueError(f"alpha_star must lie in (0, 1), got {limit}")
    k = len(v)
    p, q = limit.numerator, limit.denominator
    prefix = [0]
    for x in v.values:
        prefix.append(prefix[-1] + x)

    def cap_ok(cap: int, u: int, j: int) -> bool:
        # share of trunc(v, cap) for the top j clients, compared exactly
        lo = k - j
        a = prefix[u] - prefix[lo] if lo < u else 0
        b = k - max(u, lo)
        c = prefix[u]
        d = k - u
        return (a + b * cap) * q <= p * (c + d * cap)

    pairs: list[tuple[Fraction, int]] = []
    j = math.floor(limit * k)
    u = 1
    while j >= 1 and u <= k - 1:
        upper = v.values[u]  # cap at the top of interval u
        if upper == 0 or cap_ok(upper, u, j):
            u += 1
            continue
        if not cap_ok(max(1, v.values[u - 1]), u, j):
            j -= 1  # no cap works for this alpha; skip the grid point
            continue
        lo = k - j
        a = prefix[u] - prefix[lo] if lo < u else 0
        b = k - max(u, lo)
        c = prefix[u]
        d = k - u
        denom = d * p - b * q
        if denom >= 0:
            raise DegenerateInterval(
                f"share constraint cannot bind on interval {u} while sweeping"
            )
        cap = (a * q - c * p) // denom
        pairs.append((Fraction(j, k), cap))
        j -= 1
    return TradeoffCurve(tuple(pairs))


@dataclass(frozen=True)
class Passthrough:
    """Leave declared counts untouched."""


@dataclass(frozen=True)
class Ignore:
    """Discard declared counts; every client weighs one."""


@dataclass(frozen=True)
class Truncate:
    """Cap declared counts at the solved bound for this query."""

    query: TruncationQuery


PreprocessMode = Union[Passthrough, Ignore, Truncate]


def preprocess(v: WeightVector, mode: PreprocessMode) -> WeightVector:
    """Apply a preprocessing mode to declared counts."""
    if isinstance(mode, Passthrough):
        return v
    if isinstance(mode, Ignore):
        return WeightVector((1,) * len(v), v.ids)
    if isinstance(mode, Truncate):
        outcome = solve_truncation(v, mode.query)
        if outcome.status == TruncationStatus.INFEASIBLE:
            raise PreprocessInfeasible(
                f"no cap satisfies share limit {mode.query.alpha_star} "
                f"at fraction {mode.query.alpha}"
            )
        if outcome.status == TruncationStatus.NO_TRUNCATION_NEEDED:
            return v
        return truncate(v, outcome.cap)
    raise TypeError(f"unknown preprocess mode: {mode!r}")


def read_weights_file(path) -> WeightVector:
    """Read one integer per line; blank lines and # comments are skipped."""
    values: list[int] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                value = int(line)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not an integer: {line!r}") from None
            if value < 0:
                raise ValueError(f"{path}:{lineno}: weights must be non-negative")
            values.append(value)
    if not values:
        raise ValueError(f"{path}: no weights found")
    return WeightVector.from_values(values)


def write_weights_file(path, v: WeightVector) -> None:
    with open(path, "w", newline="") as fh:
        for x in v.values:
            fh.write(f"{x}\n")
