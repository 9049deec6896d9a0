import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from newsboy.demand import (
    Gamma,
    LogNormal,
    PoissonDemandModel,
    SalesWindow,
    continuous_reciprocal_tail,
    exact_reciprocal_tail,
    fit_poisson_mle,
    index_shifted_tail,
    poisson_cdf,
    poisson_pmf,
    poisson_quantile,
    poisson_reciprocal_tail,
)
from newsboy.errors import DataError, DomainError, NumericError

LAMBDAS = [0.5, 1, 5, 10, 50]


class TestPoissonPmf:
    def test_zero_count(self):
        assert poisson_pmf(0, 1.0) == pytest.approx(math.exp(-1), rel=1e-15)

    def test_one_count(self):
        assert poisson_pmf(1, 1.0) == pytest.approx(math.exp(-1), rel=1e-15)

    def test_value_at_15_rate_10(self):
        # direct factorial evaluation and scipy agree on 0.0347180696...
        direct = math.exp(-10) * 10**15 / math.factorial(15)
        assert direct == pytest.approx(0.034718069630684245, rel=1e-14)
        assert poisson_pmf(15, 10) == pytest.approx(direct, rel=1e-13)

    @pytest.mark.parametrize("lam", [1e3, 5e3, 2e4])
    def test_large_rate_no_overflow(self, lam):
        k = int(lam)
        assert poisson_pmf(k, lam) == pytest.approx(stats.poisson.pmf(k, lam), rel=1e-9)
        assert poisson_pmf(20 * k, lam) == 0.0

    def test_beyond_log_factorial_table(self):
        assert poisson_pmf(12_000, 12_000.0) == pytest.approx(stats.poisson.pmf(12_000, 12_000.0), rel=1e-9)

    @pytest.mark.parametrize("lam", [0, -1, math.nan, math.inf, "x"])
    def test_bad_rate(self, lam):
        with pytest.raises(DomainError):
            poisson_pmf(1, lam)

    def test_non_integer_count(self):
        with pytest.raises(DomainError):
            poisson_pmf(1.5, 2.0)


class TestPoissonCdf:
    def test_single_term(self):
        assert poisson_cdf(0, 1.0) == pytest.approx(math.exp(-1), rel=1e-15)

    def test_two_terms(self):
        assert poisson_cdf(1, 1.0) == pytest.approx(2 * math.exp(-1), rel=1e-15)

    def test_negative_count_is_zero(self):
        assert poisson_cdf(-1, 3.0) == 0.0

    def test_approaches_one_monotonically(self):
        values = [poisson_cdf(k, 5.0) for k in range(60)]
        assert all(b >= a for a, b in zip(values, values[1:]))
        assert values[-1] == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("lam", LAMBDAS)
    def test_is_running_pmf_sum(self, lam):
        running = 0.0
        for k in range(int(10 * lam) + 1):
            running = math.fsum([running, poisson_pmf(k, lam)])
            assert abs(poisson_cdf(k, lam) - running) < 1e-12

    @pytest.mark.parametrize("lam", LAMBDAS)
    def test_matches_scipy(self, lam):
        ks = np.arange(0, int(5 * lam) + 5)
        ours = [poisson_cdf(int(k), lam) for k in ks]
        np.testing.assert_allclose(ours, stats.poisson.cdf(ks, lam), rtol=1e-12, atol=1e-15)


class TestPoissonQuantile:
    def test_zero_level(self):
        assert poisson_quantile(0.0, 3.0) == 0

    def test_95_percent_rate_10(self):
        # linear scan oracle: F(14) = 0.9165 < 0.95 <= F(15) = 0.9513
        assert stats.poisson.cdf(14, 10) < 0.95 <= stats.poisson.cdf(15, 10)
        assert poisson_quantile(0.95, 10.0) == 15

    def test_median_rate_1(self):
        assert poisson_quantile(0.5, 1.0) == 1

    @pytest.mark.parametrize("lam", [0.3, 4.0, 57.5])
    def test_level_one_ulp_below_one(self, lam):
        # the true CDF crosses 1 - 2**-53 once the upper tail drops below 2**-53
        p = math.nextafter(1.0, 0.0)
        q = poisson_quantile(p, lam)
        assert stats.poisson.sf(q, lam) <= 2 ** -53 * (1 + 1e-6)
        assert stats.poisson.sf(q - 2, lam) > 2 ** -53

    @pytest.mark.parametrize("lam", [2.0, 30.0])
    def test_upper_tail_keeps_precision(self, lam):
        for k in range(int(lam) + 1, int(lam) + 40):
            want = stats.poisson.sf(k, lam)
            assert 1.0 - poisson_cdf(k, lam) == pytest.approx(want, abs=2e-16, rel=1e-6)

    @pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
    def test_bad_level(self, p):
        with pytest.raises(DomainError):
            poisson_quantile(p, 2.0)

    @pytest.mark.parametrize("lam", LAMBDAS)
    @pytest.mark.parametrize("p", [1e-9, 0.01, 0.3, 0.5, 0.9, 0.975, 1 - 1e-9])
    def test_round_trip(self, lam, p):
        q = poisson_quantile(p, lam)
        assert poisson_cdf(q, lam) >= p
        assert q == 0 or poisson_cdf(q - 1, lam) < p

    @given(p=st.floats(0, 1, exclude_max=True), lam=st.floats(0.01, 200))
    @settings(max_examples=300, deadline=None)
    def test_round_trip_property(self, p, lam):
        q = poisson_quantile(p, lam)
        assert poisson_cdf(q, lam) >= p
        assert q == 0 or poisson_cdf(q - 1, lam) < p


class TestReciprocalTail:
    def test_exact_from_zero_rate_1(self):
        # direct series sum_{k>=1} e^-1 / (k k!) = e^-1 (Ei(1) - euler_gamma)
        closed = math.exp(-1) * (special.expi(1.0) - np.euler_gamma)
        series = math.fsum(stats.poisson.pmf(k, 1.0) / k for k in range(1, 60))
        assert closed == pytest.approx(0.48482910699568765, rel=1e-13)
        assert series == pytest.approx(closed, rel=1e-13)
        assert poisson_reciprocal_tail(0, 1.0).exact == pytest.approx(closed, rel=1e-13)

    def test_approximation_from_zero(self):
        # (1 - F(0)) / lambda
        assert poisson_reciprocal_tail(0, 1.0).approx == pytest.approx(1 - math.exp(-1), rel=1e-14)

    @pytest.mark.parametrize("lam", LAMBDAS)
    def test_index_shift_identity(self, lam):
        for q in range(0, int(5 * lam) + 1):
            direct = math.fsum(
                math.exp(-lam + (k + 1) * math.log(lam) - math.lgamma(k + 2)) for k in range(q, q + 400)
            )
            assert abs(index_shifted_tail(q, lam) - (1 - poisson_cdf(q, lam))) < 1e-12
            assert abs(direct - (1 - poisson_cdf(q, lam))) < 1e-12

    @pytest.mark.parametrize("lam", LAMBDAS)
    def test_exact_matches_scipy_series(self, lam):
        ks = np.arange(1, int(10 * lam) + 200)
        w = stats.poisson.pmf(ks, lam) / ks
        for q in [0, 1, int(lam), int(3 * lam)]:
            assert exact_reciprocal_tail(q, lam) == pytest.approx(w[max(q, 1) - 1 :].sum(), rel=1e-12)

    def test_gap_is_reported(self):
        tail = poisson_reciprocal_tail(10, 10.0)
        assert tail.gap == pytest.approx(tail.approx - tail.exact)

    def test_far_tail_is_zero(self):
        assert poisson_reciprocal_tail(10_000, 1.0).exact == 0.0


class TestFit:
    def test_mean(self):
        assert fit_poisson_mle(SalesWindow("c", "s", (2, 3, 4))).lambda_hat == 3.0

    def test_zero_sales_degenerate(self):
        model = fit_poisson_mle(SalesWindow("c", "s", (0, 0, 0)))
        assert model.lambda_hat == 0.0 and model.degenerate

    def test_nine_weeks(self):
        model = fit_poisson_mle(SalesWindow("c", "s", (5,) * 9))
        assert model.lambda_hat == 5.0 and model.n_samples == 9

    def test_exact_mean_no_smoothing(self):
        sales = (1, 0, 7, 2, 2, 9, 0, 3, 1)
        assert fit_poisson_mle(SalesWindow("c", "s", sales)).lambda_hat == sum(sales) / 9

    def test_empty_window(self):
        with pytest.raises(DataError):
            SalesWindow("c", "s", ())

    def test_negative_sales(self):
        with pytest.raises(DataError):
            SalesWindow("c", "s", (1, -1))

    def test_model_invariants(self):
        with pytest.raises(DataError):
            PoissonDemandModel("c", "s", -0.1, 3)
        with pytest.raises(DataError):
            PoissonDemandModel("c", "s", 1.0, 0)

    @pytest.mark.parametrize("lam", [0.5, 3.0, 20.0])
    def test_mle_concentration(self, lam):
        n = 50
        rng = np.random.default_rng(2024)
        hits = 0
        trials = 500
        for _ in range(trials):
            draws = rng.poisson(lam, size=n)
            est = fit_poisson_mle(SalesWindow("c", "s", tuple(int(x) for x in draws))).lambda_hat
            hits += abs(est - lam) < 4 * math.sqrt(lam / n)
        assert hits >= 0.99 * trials


class TestContinuousDensities:
    @pytest.mark.parametrize("density, frozen", [
        (LogNormal(0.0, 1.0), stats.lognorm(s=1.0)),
        (LogNormal(0.7, 0.4), stats.lognorm(s=0.4, scale=math.exp(0.7))),
        (Gamma(2.0, 1.0), stats.gamma(a=2.0)),
        (Gamma(3.5, 2.0), stats.gamma(a=3.5, scale=0.5)),
    ])
    def test_against_scipy(self, density, frozen):
        xs = [0.01, 0.3, 1.0, 2.5, 7.0]
        np.testing.assert_allclose([density.pdf(x) for x in xs], frozen.pdf(xs), rtol=1e-12)
        np.testing.assert_allclose([density.cdf(x) for x in xs], frozen.cdf(xs), rtol=1e-12)
        assert density.ppf(0.3) == pytest.approx(frozen.ppf(0.3), rel=1e-10)
        assert density.upper_bound == pytest.approx(frozen.ppf(1 - 1e-12), rel=1e-8)

    def test_support(self):
        for d in (LogNormal(), Gamma()):
            assert d.pdf(0.0) == 0.0 and d.pdf(-1.0) == 0.0 and d.cdf(0.0) == 0.0
            assert d.cdf(1e9) == pytest.approx(1.0)


class TestContinuousReciprocalTail:
    def test_empty_tail(self):
        d = LogNormal(0, 1)
        assert continuous_reciprocal_tail(d, d.upper_bound * 1.01) == 0.0

    def test_lognormal_reciprocal_moment(self):
        # E[1/D] = exp(-mu + sigma^2 / 2) for lognormal; cross-checked by Monte Carlo
        d = LogNormal(0, 1)
        rng = np.random.default_rng(11)
        mc = np.mean(1.0 / rng.lognormal(0.0, 1.0, size=2_000_000))
        assert mc == pytest.approx(math.exp(0.5), rel=5e-3)
        assert continuous_reciprocal_tail(d, 1e-6) == pytest.approx(math.exp(0.5), rel=1e-9)

    def test_gamma_closed_form(self):
        # shape 2, rate 1: f(x)/x = exp(-x), so the tail is exp(-q) (minus the 1e-12 cut)
        d = Gamma(2.0, 1.0)
        for q in (0.1, 1.0, 3.0, 10.0):
            assert continuous_reciprocal_tail(d, q) == pytest.approx(math.exp(-q) - math.exp(-d.upper_bound), rel=1e-10)

    @pytest.mark.parametrize("d", [LogNormal(0, 1), Gamma(2, 1), LogNormal(1.0, 0.5)])
    def test_strictly_decreasing(self, d):
        qs = np.geomspace(d.ppf(1e-6), d.ppf(1 - 1e-6), 200)
        tails = [continuous_reciprocal_tail(d, float(q)) for q in qs]
        assert all(a > b for a, b in zip(tails, tails[1:]))
        assert all(t >= 0 for t in tails)

    def test_non_positive_start(self):
        with pytest.raises(DomainError):
            continuous_reciprocal_tail(LogNormal(), 0.0)

    def test_generic_reciprocal_mean_fallback(self):
        d = LogNormal(0.2, 0.6)
        generic = super(LogNormal, d).reciprocal_mean()
        assert generic == pytest.approx(d.reciprocal_mean(), rel=1e-8)


class _Divergent(LogNormal):
    def pdf(self, x):
        return 1.0 / (abs(x - 3.0000001) ** 0.9999 + 1e-300)


class _NotANumber(LogNormal):
    def pdf(self, x):
        return math.nan if x > 2 else super().pdf(x)


@pytest.mark.parametrize("density", [_Divergent(), _NotANumber()])
def test_quadrature_failure_reports_diagnostics(density):
    with pytest.raises(NumericError) as err:
        continuous_reciprocal_tail(density, 0.5)
    assert {"lower", "upper", "abserr", "evaluations"} <= set(err.value.diagnostics)
