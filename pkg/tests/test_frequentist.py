from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpuf.exceptions import DomainError
from kpuf.experiment import VisitTable
from kpuf.stats import (
    binomial_gof,
    binomial_pmf_oracle,
    cell_binomial_tests,
    chi_square_uniformity,
    expit,
    logit,
)
from kpuf.stats.frequentist import pool_tail_bins


def exact_pmf(n, p, k):
    return float(comb(n, k) * p**k * (1 - p) ** (n - k))


P = Fraction(1, 1024)


@pytest.mark.parametrize("k", range(0, 12))
def test_pmf_matches_exact_rational(k):
    assert binomial_pmf_oracle(480, 1 / 1024, k) == pytest.approx(exact_pmf(480, P, k), rel=1e-12, abs=1e-12)


def test_pmf_zero_count_value():
    # (1023/1024)**480 evaluated in rationals
    assert binomial_pmf_oracle(480, 1 / 1024, 0) == pytest.approx(float(Fraction(1023, 1024) ** 480), rel=1e-13)
    assert abs(binomial_pmf_oracle(480, 1 / 1024, 0) - 0.6256) < 1e-4


def test_pmf_normalizes():
    total = sum(binomial_pmf_oracle(480, 1 / 1024, k) for k in range(481))
    assert abs(total - 1) < 1e-10


@pytest.mark.parametrize("n", [0, 1, 7, 480])
def test_pmf_degenerate_probabilities(n):
    assert binomial_pmf_oracle(n, 0.0, 0) == 1.0
    assert binomial_pmf_oracle(n, 1.0, n) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 200), st.fractions(0, 1, max_denominator=1000), st.data())
def test_pmf_matches_rational_everywhere(n, p, data):
    k = data.draw(st.integers(0, n))
    assert binomial_pmf_oracle(n, float(p), k) == pytest.approx(exact_pmf(n, p, k), rel=1e-9, abs=1e-300)


@pytest.mark.parametrize("args", [(-1, 0.5, 0), (5, 1.5, 0), (5, -0.1, 0), (5, 0.5, 6), (5, 0.5, 1.5), (2.5, 0.5, 1)])
def test_pmf_domain(args):
    with pytest.raises(DomainError):
        binomial_pmf_oracle(*args)


def test_logit_of_uniform_visit_probability():
    assert logit(1 / 1024) == pytest.approx(-np.log(1023), abs=1e-12)
    assert expit(logit(0.3)) == pytest.approx(0.3)


def test_chi_square_equal_counts():
    res = chi_square_uniformity(np.full(1024, 47))
    assert res.statistic == 0.0 and res.pvalue == 1.0 and res.dof == 1023
    assert res.warning is None


def test_chi_square_small_expected_warns():
    res = chi_square_uniformity(np.ones(1024))
    assert res.warning is not None


def test_chi_square_hand_value():
    res = chi_square_uniformity(np.array([10, 20, 30]))
    assert res.statistic == pytest.approx((100 + 0 + 100) / 20)
    assert res.dof == 2


def test_chi_square_rejects_empty():
    with pytest.raises(DomainError):
        chi_square_uniformity(np.zeros(8))


def _uniform_table(rng, runs, p=None):
    p = np.full(1024, 1 / 1024) if p is None else p
    return VisitTable(np.stack([rng.multinomial(480, p) for _ in range(runs)]), 480)


def test_chi_square_null_calibration():
    rng = np.random.default_rng(12)
    pvals = [chi_square_uniformity(_uniform_table(rng, 1000)).pvalue for _ in range(100)]
    assert sum(p > 0.01 for p in pvals) >= 98


def test_chi_square_detects_biased_cell():
    rng = np.random.default_rng(13)
    p = np.full(1024, 1 / 1024)
    p[17] *= 5
    p /= p.sum()
    assert chi_square_uniformity(_uniform_table(rng, 1000, p)).pvalue < 1e-6


def test_pool_tail_bins():
    obs, exp = pool_tail_bins([50, 30, 10, 3, 1], [48, 32, 12, 4, 0.5])
    assert obs.tolist() == [50, 30, 14]
    assert exp.tolist() == [48, 32, 16.5]


def test_binomial_gof_accepts_binomial_sample():
    rng = np.random.default_rng(3)
    freq = np.bincount(rng.binomial(480, 1 / 1024, size=102400))
    assert binomial_gof(freq, 480, 1 / 1024).pvalue > 0.01


def test_binomial_gof_rejects_overdispersion():
    rng = np.random.default_rng(3)
    p = rng.beta(2, 2046, size=102400)
    freq = np.bincount(rng.binomial(480, p))
    assert binomial_gof(freq, 480, 1 / 1024).pvalue < 1e-6


def test_cell_tests_flag_biased_cell():
    rng = np.random.default_rng(4)
    p = np.full(1024, 1 / 1024)
    p[17] *= 5
    p /= p.sum()
    pv = cell_binomial_tests(_uniform_table(rng, 100, p))
    assert pv[17] < 1e-10
    assert np.argmin(pv) == 17
