"""Model-independent algebra of Bayes factors, odds, and stopped values.

Everything here works in natural-log space: Bayes factors grow or decay
geometrically with the sample size, so linear-space products overflow
long before the horizons used elsewhere in the package.  All types are
immutable values and all operations are pure functions.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union


class Never(enum.Enum):
    """Explicit 'the rule never fired' outcome (not an error, not infinity)."""

    NEVER = "never"

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return "NEVER"


NEVER = Never.NEVER

StopIndex = Union[int, Never]


@dataclass(frozen=True)
class PriorOdds:
    """Prior odds of the alternative over the null, stored as a natural log.

    The default 0.0 means equal prior odds.
    """

    log_odds: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.log_odds):
            raise ValueError(f"log prior odds must be finite, got {self.log_odds}")


@dataclass(frozen=True)
class SignificanceLevel:
    """A Type-I error level alpha in (0, 1]."""

    alpha: float

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")

    @property
    def log_threshold(self) -> float:
        """log(1/alpha), the evidence threshold whose crossing rejects."""
        return -math.log(self.alpha)


@dataclass(frozen=True)
class BfTrajectory:
    """Per-prefix log Bayes factors for one data sequence.

    ``log_beta[i]`` holds log beta_n for n = start + i where
    ``start = max(m, 1)``; ``m`` is the initial-sample size (0 for models
    with proper priors).  All entries must be finite: the models in this
    package are mutually absolutely continuous, so an infinite Bayes
    factor signals a bug upstream, not evidence.
    """

    m: int
    log_beta: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.m < 0:
            raise ValueError("initial-sample size m must be >= 0")
        if not self.log_beta:
            raise ValueError("trajectory must contain at least one value")
        object.__setattr__(self, "log_beta", tuple(float(v) for v in self.log_beta))
        for v in self.log_beta:
            if not math.isfinite(v):
                raise ValueError(f"log Bayes factors must be finite, got {v}")

    @property
    def start(self) -> int:
        return max(self.m, 1)

    @property
    def end(self) -> int:
        """Largest n covered by the trajectory."""
        return self.start + len(self.log_beta) - 1

    @property
    def log_beta_m(self) -> float:
        """log beta_m, defined for m >= 1."""
        if self.m < 1:
            raise ValueError("log_beta_m is only defined for m >= 1")
        return self.value_at(self.m)

    def value_at(self, n: int) -> float:
        if not (self.start <= n <= self.end):
            raise ValueError(f"n={n} outside trajectory range [{self.start}, {self.end}]")
        return self.log_beta[n - self.start]


@dataclass(frozen=True)
class StopOutcome:
    """Where a rule fired on a trajectory and the stopped log Bayes factor."""

    stop_index: StopIndex
    stopped_log_beta: Optional[float] = None

    def __post_init__(self) -> None:
        if self.stop_index is NEVER:
            if self.stopped_log_beta is not None:
                raise ValueError("no stopped value when the rule never fired")
        else:
            if not isinstance(self.stop_index, int) or self.stop_index < 1:
                raise ValueError(f"stop index must be a positive integer, got {self.stop_index}")
            if self.stopped_log_beta is None or not math.isfinite(self.stopped_log_beta):
                raise ValueError("stopped log Bayes factor must be finite")

    @property
    def stopped(self) -> bool:
        return self.stop_index is not NEVER


def posterior_odds(prior: PriorOdds, log_beta: float) -> float:
    """Log posterior odds: prior log odds plus the log Bayes factor."""
    if not math.isfinite(log_beta):
        raise ValueError(f"log Bayes factor must be finite, got {log_beta}")
    return prior.log_odds + log_beta


def conditional_bf(traj: BfTrajectory, n: int) -> float:
    """log beta_{n|m}: the Bayes factor for x_{m+1..n} after updating on x^m.

    Exactly log beta_n - log beta_m, which is the log-space form of the
    coherence identity between updating all at once and updating in two
    stages.
    """
    if traj.m < 1:
        raise ValueError("conditional Bayes factor requires m >= 1")
    if n < traj.m:
        raise ValueError(f"n={n} must be >= m={traj.m}")
    return traj.value_at(n) - traj.value_at(traj.m)


def stop(traj: BfTrajectory, rule, data: Sequence) -> StopOutcome:
    """Apply a stopping rule to a trajectory and return the stopped value.

    The rule is queried at n = m+1, m+2, ... in order; the first n at
    which it fires (or at which its cap forces a stop) is the stop index.
    The stopped value is read from ``traj`` verbatim, never recomputed,
    so two rules stopping at the same n on the same data yield
    bit-identical stopped values.

    Returns ``StopOutcome(NEVER)`` only when the rule never fires within
    the available data and its cap lies beyond the data.
    """
    if len(data) < traj.end:
        raise ValueError("data shorter than the trajectory it produced")
    first = max(traj.m + 1, traj.start)
    for n in range(first, traj.end + 1):
        prefix = data[:n]
        log_beta_prefix = [traj.value_at(j) for j in range(traj.start, n + 1)]
        if rule.decide(prefix, log_beta_prefix, m=traj.m):
            return StopOutcome(stop_index=n, stopped_log_beta=traj.value_at(n))
    return StopOutcome(stop_index=NEVER)
