"""Parallel trial engine and the estimators built on its records.

Reproducibility model
    Every trial owns a counter-based Philox stream keyed by a 64-bit
    digest of (experiment seed, hypothesis, nuisance value, run variant)
    in one key word and the trial index in the other.  A trial's draws
    are therefore a pure function of (seed, configuration, trial index):
    neither the worker count, nor the block layout, nor which trials ran
    before it can change a single record.  Workers only split the trial
    range; results are concatenated in trial order.

Trajectory evaluation
    Trials advance in lockstep over whole blocks.  The running
    statistics (sum, sum of squares) determine the invariant coordinate
    at each step, and the log Bayes factor comes from the per-n
    Chebyshev tables in :class:`~optstop.models.ScaleBfCurves`.  The
    tables are prebuilt sequentially before workers start, so every
    stopping decision thresholds the same deterministic function of the
    maximal invariant regardless of scheduling.

Pass criteria
    Calibration checks bin stopped values into equal-count bins and
    require the bin's geometric-mean Bayes factor to fall inside the 95%
    confidence interval of the alternative/null frequency ratio for at
    least 93% of usable bins; 93% is a test-design constant (nominal
    coverage minus multiplicity slack), not a theoretical quantity.
    Mean and rate checks use three standard errors.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import NEVER, SignificanceLevel, stop
from .exact import FiniteModel, sample_sequence, trajectory_finite
from .groups import GroupElement
from .models import CauchyEffect, InvariantModelPair, PointMass, ScaleBfCurves
from .stopping import BfThreshold, FixedN, StoppingRule, SumSquaresRule

BLOCK_SIZE = 8192
DEFAULT_BINS = 30
BIN_PASS_FRACTION = 0.93
MAX_BIN_WIDTH = 0.2  # nats; see estimate_strong_calibration
Z95 = 1.959963984540054

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class TrialRecord:
    """One stopped trial; rerunning the same (seed, config, trial) reproduces it."""

    k: int
    g: Union[float, Tuple[float, float]]
    stop_index: int
    stopped_log_beta: float
    seed: int
    trial: int


def worker_count(requested: Optional[int] = None) -> int:
    """Requested worker count, capped by the OPTSTOP_THREADS environment variable."""
    count = requested if requested is not None else (os.cpu_count() or 1)
    env = os.environ.get("OPTSTOP_THREADS")
    if env:
        count = min(count, max(int(env), 1))
    return max(count, 1)


def _stream_key(seed: int, k: int, g_components: Sequence[float], variant: int) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<q", int(seed)))
    h.update(bytes([k & 0xFF, variant & 0xFF]))
    for c in g_components:
        h.update(struct.pack("<d", float(c)))
    return int.from_bytes(h.digest(), "little")


def _trial_generator(key64: int, trial: int) -> np.random.Generator:
    key = np.array([key64 & _MASK64, trial & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


_curves_cache: dict = {}


def _curves_for(pair: InvariantModelPair) -> ScaleBfCurves:
    prior = pair.effect_prior
    if isinstance(prior, CauchyEffect):
        key = ("cauchy", prior.scale)
    else:
        key = ("point", prior.delta0)
    curves = _curves_cache.get(key)
    if curves is None:
        curves = ScaleBfCurves(pair)
        _curves_cache[key] = curves
    return curves


def _vector_stop_mask(rule: StoppingRule, n: int, lb: np.ndarray, sum_sq: np.ndarray) -> np.ndarray:
    if n >= rule.cap:
        return np.ones(lb.shape, dtype=bool)
    if isinstance(rule, FixedN):
        return np.full(lb.shape, n >= rule.n)
    if isinstance(rule, BfThreshold):
        mask = lb >= rule.log_upper
        if rule.lower is not None:
            mask = mask | (lb <= rule.log_lower)
        return mask
    if isinstance(rule, SumSquaresRule):
        return sum_sq >= rule.threshold
    raise NotImplementedError(
        "the vector engine runs FixedN, BfThreshold, and sum-of-squares rules; "
        f"got {type(rule).__name__}"
    )


def _run_block(
    pair: InvariantModelPair,
    curves: Optional[ScaleBfCurves],
    k: int,
    g: GroupElement,
    rule: StoppingRule,
    key64: int,
    lo: int,
    hi: int,
    seed: int,
    x_init: Optional[float],
    lb_offset: float,
) -> List[TrialRecord]:
    """Run trials [lo, hi) in lockstep and return their records in order."""
    size = hi - lo
    gens = [_trial_generator(key64, t) for t in range(lo, hi)]

    marginal = x_init is not None
    if marginal:
        states = [pair._posterior_predictive_state(k, x_init, gen) for gen in gens]
        a = np.array([s for s, _ in states])
        b = 0.0
        delta = np.array([d for _, d in states])
    else:
        if k == 1:
            delta = np.array([pair.effect_prior.draw(gen) for gen in gens])
        else:
            delta = np.zeros(size)
        if pair.is_scale:
            a, b = float(g), 0.0
        else:
            a, b = float(g[0]), float(g[1])

    n_draws = rule.cap - (1 if marginal else 0)
    draws = np.empty((size, n_draws))
    for i, gen in enumerate(gens):
        draws[i] = gen.standard_normal(n_draws)

    s1 = np.empty(size)
    s2 = np.empty(size)
    if marginal:
        s1[:] = x_init
        s2[:] = x_init * x_init
    else:
        x1 = a * (delta + draws[:, 0]) + b
        for i in np.nonzero(x1 == 0.0)[0]:
            while x1[i] == 0.0:  # excluded set has probability zero; redraw
                x1[i] = a * (delta[i] + float(gens[i].standard_normal())) + b
        s1[:] = x1
        s2[:] = x1 * x1

    active = np.ones(size, dtype=bool)
    stop_n = np.zeros(size, dtype=np.int64)
    stop_lb = np.zeros(size)
    m = pair.m
    col0 = 2 if marginal else 1  # draws column holding x_n is n - col0

    for n in range(2, rule.cap + 1):
        act = np.nonzero(active)[0]
        if act.size == 0:
            break
        scale_act = a[act] if isinstance(a, np.ndarray) else a
        xn = scale_act * (delta[act] + draws[act, n - col0]) + b
        if n == 2 and not pair.is_scale:
            clash = np.nonzero(xn == s1[act])[0]
            for j in clash:
                i = act[j]
                while xn[j] == s1[i]:
                    xn[j] = a * (delta[i] + float(gens[i].standard_normal())) + b
        s1[act] += xn
        s2[act] += xn * xn
        if n <= m:
            continue
        if curves is not None:
            q = s1[act] ** 2 / (n * s2[act])
            np.clip(q, 0.0, 1.0, out=q)
            lb = curves.log_bf_batch(n, q, np.copysign(np.sqrt(q), s1[act])) - lb_offset
        else:
            lb = np.zeros(act.size)
        mask = _vector_stop_mask(rule, n, lb, s2[act])
        if np.any(mask):
            hit = act[mask]
            stop_n[hit] = n
            stop_lb[hit] = lb[mask]
            active[hit] = False

    g_values: Sequence
    if marginal:
        g_values = a  # the posterior-drawn nuisance value, one per trial
    elif pair.is_scale:
        g_values = [float(g)] * size
    else:
        g_values = [(float(g[0]), float(g[1]))] * size
    return [
        TrialRecord(
            k=k,
            g=g_values[i] if not isinstance(g_values, np.ndarray) else float(g_values[i]),
            stop_index=int(stop_n[i]),
            stopped_log_beta=float(stop_lb[i]),
            seed=seed,
            trial=lo + i,
        )
        for i in range(size)
    ]


def _dispatch_blocks(fn, n_trials: int, workers: Optional[int]) -> List[TrialRecord]:
    blocks = [(lo, min(lo + BLOCK_SIZE, n_trials)) for lo in range(0, n_trials, BLOCK_SIZE)]
    n_workers = worker_count(workers)
    if n_workers == 1 or len(blocks) <= 1:
        results = [fn(lo, hi) for lo, hi in blocks]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(lambda span: fn(*span), blocks))
    records: List[TrialRecord] = []
    for chunk in results:
        records.extend(chunk)
    return records


def _prepare_curves(pair: InvariantModelPair, cap: int) -> Optional[ScaleBfCurves]:
    if not pair.is_scale:
        return None
    curves = _curves_for(pair)
    if isinstance(pair.effect_prior, PointMass) and pair.effect_prior.delta0 == 0.0:
        return curves  # identically zero, no tables needed
    for n in range(2, cap + 1):  # build before workers start: single writer
        curves._table(n)
    return curves


def _validate_run(pair: InvariantModelPair, rule: StoppingRule, n_trials: int) -> None:
    if n_trials < 0:
        raise ValueError("n_trials must be nonnegative")
    if rule.cap <= pair.m:
        raise ValueError(f"rule cap {rule.cap} must exceed the initial-sample size {pair.m}")
    if isinstance(rule, FixedN) and rule.n <= pair.m:
        raise ValueError(f"fixed-n rule must stop after the initial sample (n > {pair.m})")


def run_trials(
    pair: InvariantModelPair,
    k: int,
    g: GroupElement,
    rule: StoppingRule,
    n_trials: int,
    seed: int,
    workers: Optional[int] = None,
) -> List[TrialRecord]:
    """Run independent stopped trials under P_{k,g}.

    Data are drawn sequentially from the pair under the given hypothesis
    and nuisance value, the log Bayes factor is updated after every
    observation, and the rule (with its mandatory cap) decides when to
    stop.  Deterministic given (seed, configuration); see the module
    docstring for the stream layout.
    """
    if k not in (0, 1):
        raise ValueError(f"hypothesis index must be 0 or 1, got {k}")
    _validate_run(pair, rule, n_trials)
    if n_trials == 0:
        return []
    curves = _prepare_curves(pair, rule.cap)
    g_comps = (float(g),) if pair.is_scale else (float(g[0]), float(g[1]))
    key64 = _stream_key(seed, k, g_comps, variant=0)

    def block(lo: int, hi: int) -> List[TrialRecord]:
        return _run_block(pair, curves, k, g, rule, key64, lo, hi, seed, None, 0.0)

    return _dispatch_blocks(block, n_trials, workers)


def run_marginal_trials(
    pair: InvariantModelPair,
    k: int,
    x_m: Sequence[float],
    rule: StoppingRule,
    n_trials: int,
    seed: int,
    workers: Optional[int] = None,
) -> List[TrialRecord]:
    """Trials from the conditional marginal given the initial sample.

    Each trial draws its nuisance value (and, under the alternative, its
    effect) from the hypothesis-k posterior given ``x_m``, then extends
    the sequence from ``x_m`` under those parameters.  Records hold the
    conditional stopped value log beta_{tau|m}, and the rule is applied
    to that conditional value.  Scale-group pairs only.
    """
    if not pair.is_scale:
        raise NotImplementedError("marginal trials are implemented for the scale group")
    if k not in (0, 1):
        raise ValueError(f"hypothesis index must be 0 or 1, got {k}")
    _validate_run(pair, rule, n_trials)
    x_m = np.asarray(x_m, dtype=float).reshape(-1)
    if x_m.size != pair.m:
        raise ValueError(f"initial sample must have length m = {pair.m}")
    if n_trials == 0:
        return []
    curves = _prepare_curves(pair, rule.cap)
    lb_offset = pair.log_bf(x_m) if pair.m >= 1 else 0.0
    x_init = float(x_m[0])
    key64 = _stream_key(seed, k, (x_init,), variant=1)

    def block(lo: int, hi: int) -> List[TrialRecord]:
        return _run_block(pair, curves, k, None, rule, key64, lo, hi, seed, x_init, lb_offset)

    return _dispatch_blocks(block, n_trials, workers)


def run_trials_finite(
    model: FiniteModel, k: int, rule: StoppingRule, n_trials: int, seed: int
) -> List[TrialRecord]:
    """Monte Carlo trials on a finite model, for cross-checking the exact tables.

    The finite model carries no group action: records store NaN in the
    nuisance slot.  This path is plain per-trial Python and is meant for
    test-scale runs, not for the large group-model experiments.
    """
    if k not in (0, 1):
        raise ValueError(f"hypothesis index must be 0 or 1, got {k}")
    if rule.cap > model.horizon:
        raise ValueError("rule must cap at or before the model horizon")
    key64 = _stream_key(seed, k, (), variant=2)
    records = []
    for trial in range(n_trials):
        gen = _trial_generator(key64, trial)
        seq = sample_sequence(model, k, gen)
        traj = trajectory_finite(model, seq)
        outcome = stop(traj, rule, seq)
        assert outcome.stop_index is not NEVER  # cap <= horizon forces a stop
        records.append(
            TrialRecord(
                k=k,
                g=math.nan,
                stop_index=int(outcome.stop_index),
                stopped_log_beta=float(outcome.stopped_log_beta),
                seed=seed,
                trial=trial,
            )
        )
    return records


# ------------------------------------------------------------------ estimators


def wilson_interval(successes: int, n: int, z: float = Z95) -> Tuple[float, float]:
    if n <= 0:
        raise ValueError("need at least one trial")
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(center - half, 0.0)
    hi = 1.0 if successes == n else min(center + half, 1.0)
    return lo, hi


@dataclass(frozen=True)
class CalibrationBin:
    log_beta_lo: float
    log_beta_hi: float
    count0: int
    count1: int
    ratio: float
    ci_lo: float
    ci_hi: float
    log_beta_gmean: float

    @property
    def usable(self) -> bool:
        return self.count0 > 0

    @property
    def ok(self) -> bool:
        return self.usable and self.ci_lo <= math.exp(self.log_beta_gmean) <= self.ci_hi


@dataclass(frozen=True)
class CalibrationEstimate:
    bins: Tuple[CalibrationBin, ...]
    n0: int
    n1: int

    @property
    def usable_bins(self) -> int:
        return sum(1 for b in self.bins if b.usable)

    @property
    def excluded_bins(self) -> int:
        return len(self.bins) - self.usable_bins

    @property
    def pass_fraction(self) -> float:
        usable = self.usable_bins
        if usable == 0:
            return 0.0
        return sum(1 for b in self.bins if b.ok) / usable

    @property
    def passed(self) -> bool:
        return self.pass_fraction >= BIN_PASS_FRACTION


def estimate_strong_calibration(
    records0: Sequence[TrialRecord], records1: Sequence[TrialRecord], n_bins: int = DEFAULT_BINS
) -> CalibrationEstimate:
    """Bin stopped values and compare H1/H0 frequency ratios to the bin's beta.

    Equal-count bins on the pooled sample keep per-bin confidence
    intervals comparable even though stopped-value distributions pile up
    near thresholds and leave gaps elsewhere; exact ties (atoms) collapse
    duplicate quantile edges and so occupy bins of their own.  Bins wider
    than MAX_BIN_WIDTH nats (sparse tails, the between-thresholds
    corridor) are subdivided evenly: the frequency ratio estimates the
    bin-conditional arithmetic mean of beta, which tracks the geometric
    mean being tested only while bins stay narrow.  The ratio gets a
    delta-method 95% interval on the log scale.
    """
    lb0 = np.array([r.stopped_log_beta for r in records0], dtype=float)
    lb1 = np.array([r.stopped_log_beta for r in records1], dtype=float)
    n0, n1 = lb0.size, lb1.size
    if n0 == 0 or n1 == 0:
        raise ValueError("both record lists must be nonempty")
    if n_bins < 1:
        raise ValueError("need at least one bin")
    pooled = np.concatenate([lb0, lb1])
    edges = np.unique(np.quantile(pooled, np.linspace(0.0, 1.0, n_bins + 1)))
    if edges.size < 2:
        edges = np.array([edges[0], edges[0] + 1.0])
    refined = [edges[0]]
    for right in edges[1:]:
        left = refined[-1]
        width = right - left
        if width > MAX_BIN_WIDTH:
            pieces = int(math.ceil(width / MAX_BIN_WIDTH))
            refined.extend(left + width * (i + 1) / pieces for i in range(pieces - 1))
        refined.append(right)
    edges = np.array(refined)
    edges[-1] = np.nextafter(edges[-1], math.inf)  # keep the max inside the last bin
    nb = edges.size - 1
    idx0 = np.clip(np.searchsorted(edges, lb0, side="right") - 1, 0, nb - 1)
    idx1 = np.clip(np.searchsorted(edges, lb1, side="right") - 1, 0, nb - 1)
    c0 = np.bincount(idx0, minlength=nb)
    c1 = np.bincount(idx1, minlength=nb)
    sums = np.bincount(idx0, weights=lb0, minlength=nb) + np.bincount(
        idx1, weights=lb1, minlength=nb
    )
    bins = []
    for j in range(nb):
        count0, count1 = int(c0[j]), int(c1[j])
        total = count0 + count1
        gmean = sums[j] / total if total else math.nan
        if count0 == 0:
            ratio, ci_lo, ci_hi = math.nan, math.nan, math.nan
        else:
            p0 = count0 / n0
            if count1 == 0:
                ratio, ci_lo = 0.0, 0.0
                ci_hi = (3.0 / n1) / p0  # rule-of-three upper bound
            else:
                p1 = count1 / n1
                ratio = p1 / p0
                var_log = (1.0 - p1) / (n1 * p1) + (1.0 - p0) / (n0 * p0)
                half = Z95 * math.sqrt(var_log)
                ci_lo = ratio * math.exp(-half)
                ci_hi = ratio * math.exp(half)
        bins.append(
            CalibrationBin(
                log_beta_lo=float(edges[j]),
                log_beta_hi=float(edges[j + 1]),
                count0=count0,
                count1=count1,
                ratio=ratio,
                ci_lo=ci_lo,
                ci_hi=ci_hi,
                log_beta_gmean=float(gmean),
            )
        )
    return CalibrationEstimate(bins=tuple(bins), n0=n0, n1=n1)


def estimate_marginal_calibration(
    pair: InvariantModelPair,
    x_m: Sequence[float],
    rule: StoppingRule,
    n_trials: int,
    seed: int,
    n_bins: int = DEFAULT_BINS,
    workers: Optional[int] = None,
) -> CalibrationEstimate:
    """Calibration of the conditional stopped value given one initial sample."""
    records0 = run_marginal_trials(pair, 0, x_m, rule, n_trials, seed, workers)
    records1 = run_marginal_trials(pair, 1, x_m, rule, n_trials, seed, workers)
    return estimate_strong_calibration(records0, records1, n_bins=n_bins)


@dataclass(frozen=True)
class Type1Estimate:
    alpha: float
    n_trials: int
    n_reject: int
    rate: float
    se: float
    wilson_lo: float
    wilson_hi: float

    @property
    def passed(self) -> bool:
        return self.rate <= self.alpha + 3.0 * self.se


def estimate_type1(
    records: Sequence[TrialRecord], alpha: Union[SignificanceLevel, float]
) -> Type1Estimate:
    """Fraction of trials whose stopped Bayes factor reached 1/alpha.

    Evaluating records produced by the rule built for a smaller
    threshold (a level alpha' >= alpha) is sound and monotone: crossing
    1/alpha implies having stopped at or above it.
    """
    level = alpha if isinstance(alpha, SignificanceLevel) else SignificanceLevel(float(alpha))
    lb = np.array([r.stopped_log_beta for r in records], dtype=float)
    if lb.size == 0:
        raise ValueError("no records")
    n_reject = int(np.count_nonzero(lb >= level.log_threshold))
    rate = n_reject / lb.size
    se = math.sqrt(rate * (1.0 - rate) / lb.size)
    lo, hi = wilson_interval(n_reject, lb.size)
    return Type1Estimate(
        alpha=level.alpha,
        n_trials=lb.size,
        n_reject=n_reject,
        rate=rate,
        se=se,
        wilson_lo=lo,
        wilson_hi=hi,
    )


@dataclass(frozen=True)
class StoppedBfMean:
    mean: float
    se: float
    ci_lo: float
    ci_hi: float
    n_trials: int

    @property
    def passed(self) -> bool:
        return abs(self.mean - 1.0) <= 3.0 * self.se


def estimate_stopped_bf_mean(records: Sequence[TrialRecord]) -> StoppedBfMean:
    """Sample mean of the stopped Bayes factor; equals 1 in expectation under H0."""
    beta = np.exp(np.array([r.stopped_log_beta for r in records], dtype=float))
    if beta.size == 0:
        raise ValueError("no records")
    mean = float(beta.mean())
    se = float(beta.std(ddof=1) / math.sqrt(beta.size)) if beta.size > 1 else math.inf
    return StoppedBfMean(
        mean=mean,
        se=se,
        ci_lo=mean - Z95 * se,
        ci_hi=mean + Z95 * se,
        n_trials=beta.size,
    )


# -------------------------------------------------------------- serialization


def _format_g(g) -> str:
    if isinstance(g, tuple):
        return "|".join(format(float(c), ".17g") for c in g)
    return format(float(g), ".17g")


def records_to_csv(records: Sequence[TrialRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "g", "stop_index", "stopped_log_beta", "seed", "trial"])
        for r in records:
            writer.writerow(
                [
                    r.k,
                    _format_g(r.g),
                    r.stop_index,
                    format(r.stopped_log_beta, ".17g"),
                    r.seed,
                    r.trial,
                ]
            )
