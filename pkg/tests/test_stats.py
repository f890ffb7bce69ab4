import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mnss.exceptions import InvalidInputError
from mnss.stats import (
    ConnectivityCounts,
    clopper_pearson,
    edge_estimate,
    lower_median,
    p_histogram,
    point_estimate,
    reliability_report,
)

from oracles import all_pairs, binom_tail, clopper_pearson_bisect

counts_and_n = st.integers(1, 2000).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n)))


class TestOracle:
    def test_tail_small_case(self):
        # P(X <= 1), X ~ Bin(3, 0.5) = (1 + 3) / 8
        assert binom_tail(1, 3, 0.5, upper=False) == pytest.approx(0.5, abs=1e-15)
        assert binom_tail(2, 3, 0.5, upper=True) == pytest.approx(0.5, abs=1e-15)


class TestPointEstimate:
    def test_zero(self):
        assert point_estimate(0, 100) == (0.0, 0.0)

    def test_full(self):
        assert point_estimate(100, 100) == (1.0, 0.0)

    def test_quarter(self):
        p, var = point_estimate(25, 100)
        assert p == 0.25
        assert var == pytest.approx(1.875e-3, abs=1e-15)

    @pytest.mark.parametrize("c,n", [(5, 4), (-1, 4), (0, 0)])
    def test_invalid(self, c, n):
        with pytest.raises(InvalidInputError):
            point_estimate(c, n)


class TestClopperPearson:
    def test_zero_count_closed_form(self):
        lo, hi = clopper_pearson(0, 100, 0.05)
        assert lo == 0.0
        assert hi == pytest.approx(1 - 0.025 ** (1 / 100), abs=1e-9)
        assert hi == pytest.approx(0.03622, abs=1e-5)

    def test_full_count_closed_form(self):
        lo, hi = clopper_pearson(100, 100, 0.05)
        assert hi == 1.0
        assert lo == pytest.approx(0.025 ** (1 / 100), abs=1e-9)
        assert lo == pytest.approx(0.96378, abs=1e-5)

    def test_half(self):
        lo, hi = clopper_pearson(5, 10, 0.05)
        assert lo == pytest.approx(0.1871, abs=1e-4)
        assert hi == pytest.approx(0.8129, abs=1e-4)

    @pytest.mark.parametrize("n", [1, 2, 7, 50, 1000])
    def test_closed_forms_many_n(self, n):
        for alpha in (0.01, 0.05, 0.2):
            assert clopper_pearson(0, n, alpha)[1] == pytest.approx(1 - (alpha / 2) ** (1 / n), abs=1e-9)
            assert clopper_pearson(n, n, alpha)[0] == pytest.approx((alpha / 2) ** (1 / n), abs=1e-9)

    def test_bisection_oracle_n_up_to_60(self):
        c, n = all_pairs(60)
        lo, hi = clopper_pearson(c, n, 0.05)
        olo, ohi = clopper_pearson_bisect(c, n, 0.05)
        np.testing.assert_allclose(lo, olo, atol=1e-8, rtol=0)
        np.testing.assert_allclose(hi, ohi, atol=1e-8, rtol=0)

    @pytest.mark.parametrize("alpha", [0.01, 0.1, 0.32])
    def test_bisection_oracle_other_alpha(self, alpha):
        c, n = all_pairs(30)
        lo, hi = clopper_pearson(c, n, alpha)
        olo, ohi = clopper_pearson_bisect(c, n, alpha)
        np.testing.assert_allclose(lo, olo, atol=1e-8, rtol=0)
        np.testing.assert_allclose(hi, ohi, atol=1e-8, rtol=0)

    @settings(max_examples=200, deadline=None)
    @given(counts_and_n, st.floats(0.001, 0.5))
    def test_nesting(self, cn, alpha):
        c, n = cn
        lo, hi = clopper_pearson(c, n, alpha)
        assert 0.0 <= lo <= c / n <= hi <= 1.0

    @settings(max_examples=200, deadline=None)
    @given(counts_and_n)
    def test_symmetry(self, cn):
        c, n = cn
        lo, hi = clopper_pearson(c, n)
        mlo, mhi = clopper_pearson(n - c, n)
        assert lo == pytest.approx(1 - mhi, abs=1e-10)
        assert hi == pytest.approx(1 - mlo, abs=1e-10)

    @settings(max_examples=200, deadline=None)
    @given(counts_and_n, st.floats(0.001, 0.5), st.floats(0.001, 0.5))
    def test_monotone_in_alpha(self, cn, a1, a2):
        c, n = cn
        a1, a2 = sorted((a1, a2))
        lo1, hi1 = clopper_pearson(c, n, a1)
        lo2, hi2 = clopper_pearson(c, n, a2)
        assert lo1 <= lo2 + 1e-15 and hi2 <= hi1 + 1e-15

    def test_vectorized(self):
        lo, hi = clopper_pearson(np.array([0, 5, 10]), np.array([10, 10, 10]))
        assert lo.shape == (3,)
        assert (lo[1], hi[1]) == clopper_pearson(5, 10)

    def test_large_n(self):
        lo, hi = clopper_pearson(500_000, 10**6)
        assert lo < 0.5 < hi and hi - lo < 0.003

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 2.0])
    def test_invalid_alpha(self, alpha):
        with pytest.raises(InvalidInputError):
            clopper_pearson(1, 10, alpha)

    @pytest.mark.parametrize("p", [0.01, 0.05, 0.5])
    @pytest.mark.parametrize("n", [100, 1000])
    def test_coverage(self, p, n):
        rng = np.random.default_rng(int(p * 1000) + n)
        c = rng.binomial(n, p, size=10_000)
        lo, hi = clopper_pearson(c, np.full_like(c, n))
        assert np.mean((lo <= p) & (p <= hi)) >= 0.945


class TestEdgeEstimate:
    def test_fields(self):
        e = edge_estimate(250, 1000)
        lo, hi = clopper_pearson(250, 1000)
        assert e.p_hat == 0.25
        assert e.ratio == pytest.approx((hi - lo) / 0.25, rel=1e-12)
        assert e.ci_lo <= e.p_hat <= e.ci_hi

    def test_zero_ratio_inf(self):
        assert math.isinf(edge_estimate(0, 10).ratio)


class TestConnectivityCounts:
    def test_dense_round_trip(self):
        m = np.array([[0, 3], [1, 0]])
        cc = ConnectivityCounts.from_dense(m, 10)
        np.testing.assert_array_equal(cc.dense(), m)
        assert cc.to_sparse().nnz == 2

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            ConnectivityCounts.from_dense([[11]], 10)
        with pytest.raises(InvalidInputError):
            ConnectivityCounts(2, 10, [0, 0], [1, 1], [1, 2])
        with pytest.raises(InvalidInputError):
            ConnectivityCounts(2, 10, [2], [0], [1])
        with pytest.raises(InvalidInputError):
            ConnectivityCounts(2, 0, [], [], [])


class TestReport:
    def test_all_zero(self):
        rep = reliability_report(ConnectivityCounts.from_dense(np.zeros((3, 3)), 100))
        assert np.all(np.isinf(rep.ratio)) and len(rep.ratio) == 9
        assert rep.summary["fraction_above_1"] is None
        assert rep.summary["median_ratio"] is None
        assert rep.summary["infinite_entries"] == 9

    def test_single_edge(self):
        rep = reliability_report(ConnectivityCounts(2, 1000, [0], [1], [250]))
        lo, hi = clopper_pearson(250, 1000)
        e = rep.edge(0, 1)
        assert e.ratio == pytest.approx((hi - lo) / 0.25, rel=1e-12)
        assert rep.summary["finite_entries"] == 1
        assert rep.summary["median_ratio"] == pytest.approx(e.ratio)
        assert math.isinf(rep.edge(1, 0).ratio)

    def test_scaling_shrinks_ratios(self):
        rng = np.random.default_rng(5)
        m = rng.integers(0, 40, (12, 12))
        base = ConnectivityCounts.from_dense(m, 500)
        a = reliability_report(base)
        b = reliability_report(base.scaled(100))
        finite = np.isfinite(a.ratio)
        assert np.all(b.ratio[finite] < a.ratio[finite])

    def test_hemisphere_medians(self):
        m = np.array([[0, 10, 1], [10, 0, 2], [1, 2, 0]])
        cc = ConnectivityCounts.from_dense(m, 100, hemispheres=["L", "L", "R"])
        rep = reliability_report(cc)
        intra = edge_estimate(10, 100).ratio
        inter = sorted([edge_estimate(1, 100).ratio, edge_estimate(2, 100).ratio] * 2)
        assert rep.summary["median_ratio_intra"] == pytest.approx(intra)
        assert rep.summary["median_ratio_inter"] == pytest.approx(inter[1])

    def test_fraction_above_one(self):
        m = np.array([[1, 900], [0, 0]])
        rep = reliability_report(ConnectivityCounts.from_dense(m, 1000))
        assert rep.summary["fraction_above_1"] == 0.5

    def test_deterministic(self):
        m = np.random.default_rng(2).integers(0, 5, (6, 6))
        a = reliability_report(ConnectivityCounts.from_dense(m, 50))
        b = reliability_report(ConnectivityCounts.from_dense(m, 50))
        assert a.ratio.tobytes() == b.ratio.tobytes() and a.summary == b.summary


class TestHelpers:
    def test_lower_median(self):
        assert lower_median([4, 1, 3, 2]) == 2
        assert lower_median([3, 1, 2]) == 2
        assert lower_median([]) is None

    def test_histogram(self):
        h = p_histogram([0.0, 0.005, 0.05, 0.5, 1.0])
        assert h == [(0.001, 0.01, 1), (0.01, 0.1, 1), (0.1, 1.0, 2)]

    def test_histogram_all_one(self):
        assert p_histogram([1.0, 1.0]) == [(0.1, 1.0, 2)]
