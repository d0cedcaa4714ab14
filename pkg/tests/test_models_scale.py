"""Scale-group pair: closed forms against independent quadrature oracles.

The oracles integrate the raw density products with scipy's QUADPACK
(plain or nested), never reusing the package's own integration code, so
agreement here is a genuine two-route check.
"""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from optstop.core import conditional_bf
from optstop.errors import SingularInputError
from optstop.models import (
    CauchyEffect,
    InvariantModelPair,
    PointMass,
    ScaleBfCurves,
    log_m,
    trajectory,
)

mpmath = pytest.importorskip("mpmath")


def null_log_marginal_oracle(x):
    """Adaptive quadrature of the null density over log sigma."""
    x = np.asarray(x, dtype=float)
    n, s = len(x), float(x @ x)
    center = 0.5 * math.log(s / (n + 1))

    def f(l):
        sig = math.exp(l)
        return math.exp(-0.5 * n * math.log(2 * math.pi * sig * sig) - s / (2 * sig * sig))

    val, err = integrate.quad(f, center - 30, center + 30, epsabs=0, epsrel=1e-13, limit=400)
    assert err < 1e-11 * val
    return math.log(val)


def alt_log_marginal_oracle(x, prior):
    """Nested quadrature: sigma inside (over log sigma), effect outside."""
    x = np.asarray(x, dtype=float)
    n = len(x)

    def sigma_integral(delta):
        def f(l):
            sig = math.exp(l)
            logp = -0.5 * n * math.log(2 * math.pi * sig * sig)
            logp -= float(np.sum((x - delta * sig) ** 2)) / (2 * sig * sig)
            return math.exp(logp)

        val, _ = integrate.quad(f, -30, 30, epsabs=1e-300, epsrel=1e-11, limit=400)
        return val

    if isinstance(prior, PointMass):
        return math.log(sigma_integral(prior.delta0))
    r = prior.scale

    def outer(delta):
        return sigma_integral(delta) * r / (math.pi * (delta * delta + r * r))

    val, _ = integrate.quad(outer, -np.inf, np.inf, epsabs=1e-300, epsrel=1e-10, limit=400)
    return math.log(val)


@pytest.fixture(scope="module")
def cauchy_pair():
    return InvariantModelPair.scale(CauchyEffect(1.0))


class TestNullMarginal:
    def test_single_point_closed_values(self, cauchy_pair):
        # Gamma(1/2) / (2 sqrt(pi) |x1|) = 1 / (2 |x1|)
        assert math.exp(cauchy_pair.log_marginal_null([1.0])) == pytest.approx(0.5, abs=1e-15)
        assert math.exp(cauchy_pair.log_marginal_null([2.0])) == pytest.approx(0.25, abs=1e-15)

    def test_closed_form_vs_quadrature(self, cauchy_pair, rng):
        for _ in range(25):
            n = int(rng.integers(1, 51))
            x = rng.standard_normal(n) * math.exp(rng.uniform(-2, 2))
            got = cauchy_pair.log_marginal_null(x)
            ref = null_log_marginal_oracle(x)
            assert abs(got - ref) <= 1e-10

    def test_scale_equivariance_jacobian(self, cauchy_pair, rng):
        x = rng.standard_normal(9) + 0.3
        n = len(x)
        for c in (0.5, 2.0, 17.0):
            assert cauchy_pair.log_marginal_null(c * x) == pytest.approx(
                cauchy_pair.log_marginal_null(x) - n * math.log(c), abs=1e-10
            )

    def test_excluded_set(self, cauchy_pair):
        with pytest.raises(SingularInputError):
            cauchy_pair.log_marginal_null([0.0, 1.0])


class TestLogM:
    @staticmethod
    def _reference(k, b):
        """High-precision reference.

        For b >= 0, tanh-sinh quadrature split at the mode.  For b < 0 the
        direct quadrature loses digits (huge dynamic range near zero), so
        substitute u = t/|b|, which turns the integrand into an O(1)-scaled
        gamma shape that mpmath resolves to full precision.
        """
        mpmath.mp.dps = 40
        if b < 0.0:
            mu = mpmath.mpf(-b)
            center = max(k, 1)
            pts = [0, center / 2, center, 2 * center, 4 * center, mpmath.inf]
            val = mpmath.quad(lambda t: t**k * mpmath.e ** (-((t / mu) ** 2) - t), pts)
            return mpmath.log(val) - (k + 1) * mpmath.log(mu)
        mode = (b + math.sqrt(b * b + 8 * max(k, 1))) / 4
        pts = sorted({0.0, mode / 2, mode, 2 * mode + 1}) + [mpmath.inf]
        return mpmath.log(mpmath.quad(lambda u: u**k * mpmath.e ** (-u * u + b * u), pts))

    @pytest.mark.parametrize("k", [0, 1, 2, 5, 17, 60, 199])
    @pytest.mark.parametrize("b", [-300.0, -40.0, -3.2, -0.5, 0.0, 0.7, 4.0, 55.0, 300.0])
    def test_against_high_precision(self, k, b):
        ref = float(self._reference(k, b))
        assert log_m(k, b) == pytest.approx(ref, rel=1e-11, abs=1e-11)

    def test_zero_drift_closed_form(self):
        from scipy.special import gammaln

        for k in (0, 1, 7, 40):
            assert log_m(k, 0.0) == float(gammaln((k + 1) / 2)) - math.log(2.0)


class TestAltMarginalAndBf:
    def test_pointmass_zero_equals_null_exactly(self, rng):
        pair = InvariantModelPair.scale(PointMass(0.0))
        for _ in range(10):
            x = rng.standard_normal(int(rng.integers(1, 20))) + rng.uniform(-1, 1)
            assert pair.log_bf(x) == 0.0
            assert pair.log_marginal_alt(x) == pair.log_marginal_null(x)

    def test_cauchy_bf_vs_nested_quadrature(self, cauchy_pair, rng):
        cases = [np.array([1.0, -1.0])]
        for _ in range(6):
            n = int(rng.integers(2, 12))
            cases.append(rng.standard_normal(n) + rng.uniform(-1.5, 1.5))
        for x in cases:
            got = cauchy_pair.log_bf(x)
            ref = alt_log_marginal_oracle(x, cauchy_pair.effect_prior) - null_log_marginal_oracle(x)
            # relative tolerance on the Bayes factor scale
            assert abs(math.expm1(got - ref)) <= 1e-8

    def test_pointmass_bf_vs_nested_quadrature(self, rng):
        pair = InvariantModelPair.scale(PointMass(0.8))
        for _ in range(6):
            n = int(rng.integers(1, 12))
            x = rng.standard_normal(n) + rng.uniform(-2, 2)
            got = pair.log_bf(x)
            ref = alt_log_marginal_oracle(x, pair.effect_prior) - null_log_marginal_oracle(x)
            assert abs(math.expm1(got - ref)) <= 1e-8

    def test_alt_marginal_scale_equivariance(self, cauchy_pair, rng):
        x = rng.standard_normal(7) + 0.6
        n = len(x)
        for c in (0.5, 2.0):
            assert cauchy_pair.log_marginal_alt(c * x) == pytest.approx(
                cauchy_pair.log_marginal_alt(x) - n * math.log(c), abs=1e-10
            )

    def test_bf_invariance(self, cauchy_pair, rng):
        for _ in range(50):
            n = int(rng.integers(2, 40))
            x = rng.standard_normal(n) + rng.uniform(-1, 1)
            c = math.exp(rng.uniform(-3, 3))
            assert abs(cauchy_pair.log_bf(c * x) - cauchy_pair.log_bf(x)) <= 1e-10

    def test_collinear_data_diverges(self, cauchy_pair):
        # x proportional to the ones vector has q = 1 exactly: the
        # alternative marginal diverges for n >= 3 (the effect-prior tail
        # meets an unbounded likelihood ridge), so the evidence is infinite.
        # Numeric oracles quietly misreport this point; the closed form
        # knows better.
        assert cauchy_pair.log_bf([1.0, 1.0, 1.0, 1.0]) == math.inf

    def test_unit_bf_at_initial_sample_symmetric_prior(self, cauchy_pair):
        # symmetric effect prior: a single observation carries no evidence
        for x1 in (0.3, -2.0, 11.0):
            assert cauchy_pair.log_bf([x1]) == pytest.approx(0.0, abs=1e-14)

    def test_initial_sample_bf_asymmetric_point_prior(self):
        # beta_1 = 2 * Phi(delta0 * sign(x1)): nonzero for asymmetric priors
        pair = InvariantModelPair.scale(PointMass(0.7))
        for x1 in (1.5, -0.4):
            expected = 2.0 * stats.norm.cdf(0.7 * math.copysign(1.0, x1))
            assert math.exp(pair.log_bf([x1])) == pytest.approx(expected, rel=1e-12)

    def test_conditional_bf_two_routes_agree(self, cauchy_pair, rng):
        # subtraction along the trajectory vs conditional-marginal quotient
        x = rng.standard_normal(8) + 0.5
        traj = trajectory(cauchy_pair, x)
        for n in (2, 5, 8):
            via_subtraction = conditional_bf(traj, n)
            via_marginals = (
                cauchy_pair.log_marginal_alt(x[:n]) - cauchy_pair.log_marginal_alt(x[:1])
            ) - (cauchy_pair.log_marginal_null(x[:n]) - cauchy_pair.log_marginal_null(x[:1]))
            assert via_subtraction == pytest.approx(via_marginals, abs=1e-10)


class TestMaximalInvariant:
    def test_formula(self, cauchy_pair):
        coords = cauchy_pair.maximal_invariant([2.0, -4.0, 6.0]).coords
        assert np.allclose(coords, [1.0, -2.0, 3.0], atol=0)

    def test_invariance_under_scaling(self, cauchy_pair, rng):
        x = rng.standard_normal(6) + 0.2
        a = cauchy_pair.maximal_invariant(x).coords
        b = cauchy_pair.maximal_invariant(5.0 * x).coords
        assert np.allclose(a, b, atol=1e-14)

    def test_orbit_recovery(self, cauchy_pair, rng):
        # equal invariants should expose the group element connecting the points
        x = rng.standard_normal(5) + 0.4
        c = math.exp(rng.uniform(-2, 2))
        y = c * x
        ux = cauchy_pair.maximal_invariant(x).coords
        uy = cauchy_pair.maximal_invariant(y).coords
        assert np.allclose(ux, uy, atol=1e-12)
        recovered = abs(y[0]) / abs(x[0])
        assert np.allclose(x * recovered, y, atol=1e-10 * np.max(np.abs(y)))

    def test_distinct_orbits_differ(self, cauchy_pair, rng):
        x = rng.standard_normal(5) + 0.4
        y = x.copy()
        y[2] += 1.0
        assert not np.allclose(
            cauchy_pair.maximal_invariant(x).coords, cauchy_pair.maximal_invariant(y).coords
        )


class TestSampler:
    def test_null_second_moment(self, cauchy_pair, rng):
        sigma = 1.7
        draws = np.concatenate(
            [cauchy_pair.sample(0, sigma, 4, rng) for _ in range(25_000)]
        )
        second = float(np.mean(draws**2))
        se = float(np.std(draws**2) / math.sqrt(draws.size))
        assert abs(second - sigma**2) <= 3 * se

    def test_pointmass_alternative_mean(self, rng):
        pair = InvariantModelPair.scale(PointMass(0.9))
        sigma = 2.0
        draws = np.concatenate([pair.sample(1, sigma, 5, rng) for _ in range(20_000)])
        se = float(np.std(draws) / math.sqrt(draws.size))
        assert abs(float(np.mean(draws)) - 0.9 * sigma) <= 3 * se

    def test_group_action_distribution_equality(self, rng):
        # sigma-scaled draws at g=1 match draws at g=sigma in distribution
        pair = InvariantModelPair.scale(PointMass(0.6))
        sigma = 1.9
        a = sigma * np.array([pair.sample(1, 1.0, 3, rng)[0] for _ in range(4000)])
        b = np.array([pair.sample(1, sigma, 3, rng)[0] for _ in range(4000)])
        stat = stats.ks_2samp(a, b).statistic
        crit = 1.628 * math.sqrt(2.0 / 4000.0)  # 0.01-level two-sample threshold
        assert stat < crit

    def test_rejects_bad_arguments(self, cauchy_pair, rng):
        with pytest.raises(ValueError):
            cauchy_pair.sample(2, 1.0, 3, rng)
        with pytest.raises(ValueError):
            cauchy_pair.sample(0, 1.0, 0, rng)


class TestPosteriorSampler:
    def test_chi_square_pullback(self, cauchy_pair, rng):
        x1 = 1.0
        sigmas = np.array(
            [cauchy_pair.sample_posterior_g_given_initial(0, [x1], rng) for _ in range(100_000)]
        )
        w = x1 * x1 / sigmas**2
        pvalue = stats.kstest(w, "chi2", args=(1,)).pvalue
        assert pvalue > 0.01

    def test_scale_equivariance_of_posterior(self, cauchy_pair, rng):
        a = np.array(
            [cauchy_pair.sample_posterior_g_given_initial(0, [1.0], rng) for _ in range(4000)]
        )
        b = np.array(
            [cauchy_pair.sample_posterior_g_given_initial(0, [2.0], rng) for _ in range(4000)]
        )
        stat = stats.ks_2samp(2.0 * a, b).statistic
        assert stat < 1.628 * math.sqrt(2.0 / 4000.0)

    def test_properness(self, cauchy_pair, rng):
        draws = np.array(
            [cauchy_pair.sample_posterior_g_given_initial(0, [1.3], rng) for _ in range(100_000)]
        )
        assert np.all(np.isfinite(draws))
        assert np.all(draws > 0)

    def test_unsupported_combinations(self, cauchy_pair, rng):
        with pytest.raises(NotImplementedError):
            cauchy_pair.sample_posterior_g_given_initial(1, [1.0], rng)
        ls = InvariantModelPair.location_scale(CauchyEffect(1.0))
        with pytest.raises(NotImplementedError):
            ls.sample_posterior_g_given_initial(0, [1.0, 2.0], rng)


class TestCurves:
    @pytest.mark.parametrize("prior", [CauchyEffect(1.0), PointMass(0.8)])
    def test_matches_exact_path(self, prior, rng):
        pair = InvariantModelPair.scale(prior)
        curves = ScaleBfCurves(pair)
        for n in (2, 3, 11, 64, 200):
            q = rng.uniform(0.0, 1.0 - 1e-12, 25)
            t = np.copysign(np.sqrt(q), rng.standard_normal(25))
            got = curves.log_bf_batch(n, q, t)
            exact = np.array([pair.log_bf_from_stats(n, float(qi), float(ti)) for qi, ti in zip(q, t)])
            assert np.max(np.abs(got - exact)) <= 1e-8

    def test_n_one_is_zero(self):
        curves = ScaleBfCurves(InvariantModelPair.scale(CauchyEffect(1.0)))
        out = curves.log_bf_batch(1, np.array([1.0, 1.0]), np.array([1.0, -1.0]))
        assert np.all(out == 0.0)
