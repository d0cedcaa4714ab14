import math

import numpy as np
import pytest

from optstop.models import CauchyEffect, InvariantModelPair, PointMass
from optstop.stopping import (
    BfThreshold,
    FixedN,
    InvariantStatistic,
    RawStatistic,
    check_invariance,
    rule_from_params,
    sum_squares_rule,
)


class TestDecide:
    def test_bf_threshold_stops_above_upper(self):
        rule = BfThreshold(upper=20.0, cap=100)
        assert rule.decide([0.0] * 3, [math.log(25.0)])
        assert not rule.decide([0.0] * 3, [math.log(15.0)])

    def test_bf_threshold_two_sided(self):
        rule = BfThreshold(upper=5.0, lower=0.2, cap=100)
        assert rule.decide([0.0] * 3, [math.log(0.1)])
        assert not rule.decide([0.0] * 3, [0.0])

    def test_fixed_n_continues_before_n(self):
        rule = FixedN(n=5)
        assert not rule.decide([1.0] * 4, None)
        assert rule.decide([1.0] * 5, None)

    def test_raw_statistic_direct_arithmetic(self):
        rule = sum_squares_rule(20.0, cap=100)
        assert rule.decide([3.0, 3.0, 2.0], None)  # 9 + 9 + 4 = 22 >= 20
        assert not rule.decide([3.0, 2.0], None)

    def test_cap_forces_stop(self):
        rule = BfThreshold(upper=1e9, cap=4)
        assert rule.decide([0.0] * 4, [0.0])

    def test_decide_is_pure(self):
        rule = BfThreshold(upper=5.0, lower=0.2, cap=50)
        args = ([1.0, -2.0], [0.3])
        assert all(rule.decide(*args) == rule.decide(*args) for _ in range(10))

    def test_validation(self):
        with pytest.raises(ValueError):
            BfThreshold(upper=-1.0, cap=10)
        with pytest.raises(ValueError):
            BfThreshold(upper=5.0, lower=7.0, cap=10)
        with pytest.raises(ValueError):
            FixedN(n=0)
        with pytest.raises(ValueError):
            RawStatistic(statistic=sum, threshold=1.0, cap=0)

    def test_declared_invariance_flags(self):
        assert FixedN(n=3).declared_invariant
        assert BfThreshold(upper=2.0, cap=5).declared_invariant
        assert not sum_squares_rule(1.0, cap=5).declared_invariant


class TestRuleFromParams:
    def test_round_trip(self):
        rule = rule_from_params("bf-threshold", cap=100, upper=20.0, lower=0.05)
        assert isinstance(rule, BfThreshold)
        assert rule.upper == 20.0 and rule.lower == 0.05 and rule.cap == 100

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            rule_from_params("martingale-magic", cap=10)

    def test_extra_params_rejected(self):
        with pytest.raises(ValueError):
            rule_from_params("fixed-n", cap=10, n=3, upper=2.0)


class TestCheckInvariance:
    def test_bf_threshold_invariant_under_scale(self, rng):
        pair = InvariantModelPair.scale(CauchyEffect(1.0))
        report = check_invariance(BfThreshold(upper=20.0, cap=1000), pair, 1000, rng)
        assert report.passed
        assert report.mismatches == 0

    def test_fixed_n_trivially_invariant(self, rng):
        pair = InvariantModelPair.scale(CauchyEffect(1.0))
        report = check_invariance(FixedN(n=8, cap=1000), pair, 500, rng)
        assert report.passed

    def test_sum_squares_counterexample_found(self, rng):
        pair = InvariantModelPair.scale(CauchyEffect(1.0))
        report = check_invariance(sum_squares_rule(20.0, cap=1000), pair, 1000, rng)
        assert report.counterexample is not None
        x, h = report.counterexample
        # the reported pair really does flip the decision
        rule = sum_squares_rule(20.0, cap=1000)
        assert rule.decide(x, None) != rule.decide(np.asarray(x) * h, None)

    def test_sum_squares_hand_example(self):
        # x = (1,1,1): sum 3 < 20; scaled by 5: sum 75 >= 20
        rule = sum_squares_rule(20.0, cap=100)
        assert not rule.decide([1.0, 1.0, 1.0], None)
        assert rule.decide([5.0, 5.0, 5.0], None)

    def test_invariant_statistic_rule_passes(self, rng):
        pair = InvariantModelPair.scale(CauchyEffect(1.0))
        rule = InvariantStatistic(
            statistic=lambda coords: float(np.max(np.abs(coords))),
            threshold=2.5,
            transform=lambda prefix: pair.maximal_invariant(prefix).coords,
            cap=1000,
        )
        report = check_invariance(rule, pair, 500, rng)
        assert report.passed

    def test_location_scale_group_probe(self, rng):
        pair = InvariantModelPair.location_scale(PointMass(0.0))
        ok = check_invariance(FixedN(n=6, cap=1000), pair, 300, rng)
        assert ok.passed
        bad = check_invariance(sum_squares_rule(10.0, cap=1000), pair, 500, rng)
        assert bad.counterexample is not None
