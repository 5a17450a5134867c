"""Certifying the share condition from a sample of capped weights.

When the full weight population is too large to inspect, draw k weights
i.i.d. (after capping) and test whether the top-``alpha`` share is within
``alpha_star`` for the whole population.  Three Hoeffding margins, each at
confidence delta/3, cover the top-group size, the trimmed top mean, and the
overall mean; a certificate issued despite the condition failing happens
with probability at most delta.  The check is one-sided: refusing to
certify promises nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .weights import WeightVector, as_fraction, top_share, truncate


class AlphaTooSmall(ValueError):
    """alpha must exceed the top-group margin eps1 for the window to exist."""


class ValueExceedsBound(ValueError):
    """Sampled weights must already be capped."""


@dataclass(frozen=True)
class CertificateParams:
    sample_size: int
    alpha: Fraction
    alpha_star: Fraction
    delta: float
    cap: int
    # The published margin formulas carry an extra inner logarithm in the
    # second and third terms; the proof supports the plain log, which is the
    # default.  The printed variant is reproducible but carries no soundness
    # guarantee here.
    use_printed_log_term: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", as_fraction(self.alpha))
        object.__setattr__(self, "alpha_star", as_fraction(self.alpha_star))
        if self.sample_size < 1:
            raise ValueError("sample_size must be positive")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.cap < 0:
            raise ValueError("cap must be non-negative")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0 < self.alpha_star < 1:
            raise ValueError(f"alpha_star must lie in (0, 1), got {self.alpha_star}")


@dataclass(frozen=True)
class CertificateMargins:
    eps1: float
    eps2: float
    eps3: float


CSV_HEADER = "certified,lhs,eps1,eps2,eps3,top_mean,sample_mean"


@dataclass(frozen=True)
class CertificateResult:
    certified: bool
    lhs: float
    margins: CertificateMargins
    top_mean: float
    sample_mean: float

    def to_csv(self) -> str:
        m = self.margins
        fields = [str(self.certified).lower()] + [
            f"{x:.10g}" for x in (self.lhs, m.eps1, m.eps2, m.eps3, self.top_mean, self.sample_mean)
        ]
        return CSV_HEADER + "\n" + ",".join(fields) + "\n"


def margins(params: CertificateParams) -> CertificateMargins:
    """Hoeffding margins for the three estimates behind the certificate.

    eps1 bounds the top-group size estimate, eps2 the trimmed top mean (its
    sample count shrinks to k*(alpha - eps1) + 1), eps3 the overall mean;
    eps2 and eps3 scale with the cap because weights live in [0, cap].
    Raises AlphaTooSmall when alpha <= eps1, i.e. the sample is too small to
    resolve a top group of that fraction.
    """
    k = params.sample_size
    base = math.log(3.0 / params.delta)
    tail = math.log(base) if params.use_printed_log_term else base
    eps1 = math.sqrt(base / (2.0 * k))
    alpha = float(params.alpha)
    if alpha <= eps1:
        raise AlphaTooSmall(
            f"alpha={alpha} must exceed eps1={eps1:.6g}; increase the sample size"
        )
    eps2 = params.cap * math.sqrt(tail / (2.0 * (k * (alpha - eps1) + 1.0)))
    eps3 = params.cap * math.sqrt(tail / (2.0 * k))
    return CertificateMargins(eps1, eps2, eps3)


def trimmed_window_start(params: CertificateParams, eps1: float) -> int:
    """1-based order-statistic index where the certified top window begins.

    The window covers the top alpha - eps1 fraction of the sorted sample;
    the index ceiling is taken exactly (the float eps1 enters as its exact
    binary value), so boundary indices never drift.
    """
    excess = params.alpha - Fraction(eps1)
    return math.ceil((1 - excess) * params.sample_size)


def certify_sample(sample, params: CertificateParams) -> CertificateResult:
    """Decide the share condition from one i.i.d. sample of capped weights.

    Certifies iff alpha * (trimmed top mean + eps2) / (sample mean - eps3)
    is at most alpha_star and the denominator is positive.
    """
    values = np.asarray(sample, dtype=np.int64)
    if values.ndim != 1 or values.shape[0] != params.sample_size:
        raise ValueError(
            f"sample must hold exactly {params.sample_size} values, got shape {values.shape}"
        )
    if (values < 0).any():
        raise ValueError("sampled weights must be non-negative")
    if (values > params.cap).any():
        raise ValueExceedsBound(
            f"sample contains a value above the cap {params.cap}; cap the population first"
        )
    m = margins(params)
    start = trimmed_window_start(params, m.eps1)
    ordered = np.sort(values)
    top_mean = float(ordered[start - 1:].mean())
    sample_mean = float(ordered.mean())
    denom = sample_mean - m.eps3
    if denom > 0:
        lhs = float(params.alpha) * (top_mean + m.eps2) / denom
        certified = lhs <= float(params.alpha_star)
    else:
        lhs = math.inf
        certified = False
    return CertificateResult(certified, lhs, m, top_mean, sample_mean)


def false_certification_rate(
    population: WeightVector, params: CertificateParams, trials: int, seed: int
) -> float:
    """Monte-Carlo estimate of the certificate's unsoundness on a population.

    Caps the population, then repeatedly samples with replacement and counts
    certificates issued while the capped population actually violates the
    share condition.  Returns 0 outright when the condition holds (no
    certificate can then be false).  Each trial draws from its own
    (seed, trial) stream, so the result is reproducible and independent of
    evaluation order.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    capped = truncate(population, params.cap)
    if top_share(capped, params.alpha) <= params.alpha_star:
        return 0.0
    values = np.asarray(capped.values, dtype=np.int64)
    hits = 0
    for trial in range(trials):
        rng = np.random.default_rng((seed, trial))
        sample = rng.choice(values, size=params.sample_size, replace=True)
        if certify_sample(sample, params).certified:
            hits += 1
    return hits / trials
