"""Stopping rules and the runtime invariance checker.

A rule is a deterministic function of the observed prefix (and, for
threshold rules, of the log Bayes factor at that prefix) returning
stop/continue.  Every rule carries a mandatory horizon cap that forces a
stop, so stopping times are bounded by construction.

Rules declare whether their decision is invariant under the model's
group action.  The declaration is not trusted: ``check_invariance``
probes it with randomized data and group elements, recomputing the Bayes
factor on the transformed data.  Group transformations perturb the
recomputed value at the rounding level, so decisions within 1e-10 of a
rule's decision boundary are counted as inconclusive skips rather than
failures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, ClassVar, Optional, Sequence

import numpy as np

BOUNDARY_SKIP_BAND = 1e-10


class StoppingRule:
    """Base class; concrete rules provide _fires() and boundary_gap().

    ``decide`` returns True (stop) at the first prefix where either the
    rule fires or the prefix length reaches the cap.  The caller is
    responsible for querying only at n > m; rules never see the initial
    sample alone.
    """

    cap: int
    declared_invariant: ClassVar[bool]
    uses_log_beta: ClassVar[bool] = False

    def decide(self, prefix, log_beta_prefix=None, m: int = 0) -> bool:
        if len(prefix) >= self.cap:
            return True
        return self._fires(prefix, log_beta_prefix)

    def _fires(self, prefix, log_beta_prefix) -> bool:  # pragma: no cover
        raise NotImplementedError

    def boundary_gap(self, prefix, log_beta_prefix) -> float:
        """Distance from the rule's decision boundary; inf when data-free."""
        return math.inf

    def _check_cap(self) -> None:
        if self.cap < 1:
            raise ValueError(f"cap must be a positive sample size, got {self.cap}")


@dataclass(frozen=True)
class FixedN(StoppingRule):
    """Stop at a predetermined sample size, ignoring the data."""

    n: int
    cap: Optional[int] = None
    declared_invariant: ClassVar[bool] = True

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"fixed sample size must be >= 1, got {self.n}")
        if self.cap is None:
            object.__setattr__(self, "cap", self.n)
        self._check_cap()

    def _fires(self, prefix, log_beta_prefix) -> bool:
        return len(prefix) >= self.n


@dataclass(frozen=True)
class BfThreshold(StoppingRule):
    """Stop when the Bayes factor leaves [lower, upper].

    Thresholds are on the Bayes-factor scale; ``lower`` is optional
    (one-sided rule).  The Bayes factor is a function of the maximal
    invariant, so the rule is invariant whenever the model pair shares a
    group structure.
    """

    upper: float
    lower: Optional[float] = None
    cap: int = 1000
    declared_invariant: ClassVar[bool] = True
    uses_log_beta: ClassVar[bool] = True

    def __post_init__(self) -> None:
        if not (self.upper > 0):
            raise ValueError(f"upper threshold must be positive, got {self.upper}")
        if self.lower is not None and not (0 < self.lower < self.upper):
            raise ValueError(f"lower threshold must lie in (0, upper), got {self.lower}")
        self._check_cap()

    @property
    def log_upper(self) -> float:
        return math.log(self.upper)

    @property
    def log_lower(self) -> Optional[float]:
        return None if self.lower is None else math.log(self.lower)

    def _fires(self, prefix, log_beta_prefix) -> bool:
        if log_beta_prefix is None or len(log_beta_prefix) == 0:
            raise ValueError("BfThreshold needs the current log Bayes factor")
        lb = log_beta_prefix[-1]
        if lb >= self.log_upper:
            return True
        return self.lower is not None and lb <= self.log_lower

    def boundary_gap(self, prefix, log_beta_prefix) -> float:
        lb = log_beta_prefix[-1]
        gap = abs(lb - self.log_upper)
        if self.lower is not None:
            gap = min(gap, abs(lb - self.log_lower))
        return gap


@dataclass(frozen=True)
class InvariantStatistic(StoppingRule):
    """Stop when a statistic of the maximal invariant crosses a threshold.

    ``transform`` maps the raw prefix to maximal-invariant coordinates
    (typically a pair's ``maximal_invariant``); ``statistic`` maps those
    coordinates to a real number.  Decisions depend on the data only
    through the invariant, which is what makes the rule admissible.
    """

    statistic: Callable[[np.ndarray], float]
    threshold: float
    transform: Callable[[Sequence[float]], np.ndarray]
    cap: int
    declared_invariant: ClassVar[bool] = True

    def __post_init__(self) -> None:
        self._check_cap()

    def _value(self, prefix) -> float:
        return float(self.statistic(np.asarray(self.transform(prefix), dtype=float)))

    def _fires(self, prefix, log_beta_prefix) -> bool:
        return self._value(prefix) >= self.threshold

    def boundary_gap(self, prefix, log_beta_prefix) -> float:
        return abs(self._value(prefix) - self.threshold)


@dataclass(frozen=True)
class RawStatistic(StoppingRule):
    """Stop when a statistic of the raw prefix crosses a threshold.

    Deliberately not invariant in general; the canonical example is
    'stop once the sum of squares exceeds 20', which reacts to the scale
    of the data and is therefore inadmissible for the group results.
    """

    statistic: Callable[[np.ndarray], float]
    threshold: float
    cap: int
    declared_invariant: ClassVar[bool] = False

    def __post_init__(self) -> None:
        self._check_cap()

    def _value(self, prefix) -> float:
        return float(self.statistic(np.asarray(prefix, dtype=float)))

    def _fires(self, prefix, log_beta_prefix) -> bool:
        return self._value(prefix) >= self.threshold

    def boundary_gap(self, prefix, log_beta_prefix) -> float:
        return abs(self._value(prefix) - self.threshold)


@dataclass(frozen=True)
class SumSquaresRule(RawStatistic):
    """Marker subclass so the vectorized trial engine can run this rule
    from running sums instead of re-scanning prefixes."""


def sum_squares_rule(threshold: float, cap: int) -> SumSquaresRule:
    """The standard inadmissible rule: stop once sum(x_i^2) >= threshold."""
    return SumSquaresRule(
        statistic=lambda x: float(np.dot(x, x)), threshold=threshold, cap=cap
    )


def rule_from_params(kind: str, cap: int, **params) -> StoppingRule:
    """Construct a rule from a kind name and numeric parameters.

    Used by the CLI config loader; ``InvariantStatistic`` rules need
    callables and are not constructible from flat configs.
    """
    kind = kind.strip().lower().replace("_", "-")
    if kind == "fixed-n":
        return FixedN(n=int(params.pop("n")), cap=cap, **_reject_extras(params))
    if kind == "bf-threshold":
        upper = float(params.pop("upper"))
        lower = params.pop("lower", None)
        lower = None if lower in (None, "") else float(lower)
        return BfThreshold(upper=upper, lower=lower, cap=cap, **_reject_extras(params))
    if kind == "raw-sum-squares":
        return sum_squares_rule(float(params.pop("threshold")), cap=cap, **_reject_extras(params))
    raise ValueError(f"unknown stopping-rule kind {kind!r}")


def _reject_extras(params: dict) -> dict:
    if params:
        raise ValueError(f"unexpected rule parameters: {sorted(params)}")
    return {}


@dataclass(frozen=True)
class InvarianceReport:
    """Outcome of a randomized invariance probe of one rule."""

    rule_kind: str
    declared_invariant: bool
    trials: int
    mismatches: int
    skipped_boundary: int
    counterexample: Optional[tuple] = None

    @property
    def passed(self) -> bool:
        return self.mismatches == 0


def check_invariance(rule: StoppingRule, pair, trials: int, rng: np.random.Generator,
                     max_len: int = 12) -> InvarianceReport:
    """Probe a rule's invariance under the pair's group action.

    Each trial draws a random prefix from the pair (random hypothesis,
    random nuisance value, random length in [m+1, max_len]) and a random
    group element h, then compares the rule's decision on x with its
    decision on x.h.  The log Bayes factor is recomputed from scratch on
    the transformed data; only the value at the full prefix is supplied,
    which is all the rules shipped here inspect.  For declared-invariant
    rules any disagreement outside the boundary band counts as a
    mismatch; for raw rules the probe stops at the first counterexample.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    group = pair.group
    mismatches = 0
    skipped = 0
    counterexample = None
    for _ in range(trials):
        k = int(rng.integers(0, 2))
        g = group.random_element(rng)
        n = int(rng.integers(pair.m + 1, max_len + 1))
        x = pair.sample(k, g, n, rng)
        h = group.random_element(rng)
        xh = group.act(x, h)

        if n >= rule.cap:
            skipped += 1  # cap forces both decisions; nothing to learn
            continue
        if rule.uses_log_beta:
            lb_x = [pair.log_bf(x)]
            lb_xh = [pair.log_bf(xh)]
        else:
            lb_x = lb_xh = None
        gap = min(rule.boundary_gap(x, lb_x), rule.boundary_gap(xh, lb_xh))
        if gap <= BOUNDARY_SKIP_BAND:
            skipped += 1
            continue
        if rule.decide(x, lb_x, m=pair.m) != rule.decide(xh, lb_xh, m=pair.m):
            mismatches += 1
            if counterexample is None:
                counterexample = (np.array(x), h)
            if not rule.declared_invariant:
                break
    return InvarianceReport(
        rule_kind=type(rule).__name__,
        declared_invariant=rule.declared_invariant,
        trials=trials,
        mismatches=mismatches,
        skipped_boundary=skipped,
        counterexample=counterexample,
    )
