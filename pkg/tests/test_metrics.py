import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from slotfree import metrics
from slotfree.errors import InsufficientDataError, UndefinedDPrimeError
from slotfree.patterns import random_patterns


def test_rho_trivial_cases(rng):
    x = random_patterns(1, 1000, 0.1, rng)[0]
    assert metrics.rho(x, x) == 1.0
    other = np.roll(x, 1) * (1 - x)
    assert metrics.rho(other, x) == 0.0


def test_rho_of_random_output_is_sparsity(rng):
    # hypergeometric mean k_v * k_v / n_v / k_v = s_v
    a = random_patterns(5000, 1000, 0.1, rng)
    b = random_patterns(5000, 1000, 0.1, rng)
    r = metrics.rho(a, b, 100)
    assert r.mean() == pytest.approx(0.1, abs=3 * r.std() / np.sqrt(5000) + 1e-4)


def test_d_prime_hand_example():
    assert metrics.d_prime_sample([0.1, 0.3]) == pytest.approx(2.0)
    dp = metrics.d_prime(np.array([[0.1, 0.3], [0.1, 0.3]]))
    assert dp.mean == pytest.approx(2.0)


@pytest.mark.parametrize("deltas", [[0.0, 0.0, 0.0], [0.2, 0.2, 0.2, 0.2]])
def test_d_prime_zero_spread_is_undefined(deltas):
    with pytest.raises(UndefinedDPrimeError):
        metrics.d_prime_sample(deltas)


def test_d_prime_excludes_zero_spread_samples(caplog):
    data = np.array([[0.1, 0.3], [0.2, 0.2], [0.0, 0.4]])
    with caplog.at_level("INFO"):
        dp = metrics.d_prime(data)
    assert dp.n_excluded == 1
    assert np.isnan(dp.samples[1])
    assert dp.mean == pytest.approx((2.0 + 1.0) / 2)
    assert "excluded 1" in caplog.text


def test_d_prime_needs_two_runs():
    with pytest.raises(InsufficientDataError):
        metrics.d_prime(np.ones((3, 1)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=3, max_size=20),
       st.floats(0.01, 100))
def test_d_prime_sign_and_scale(deltas, scale):
    d = np.array(deltas)
    if d.std() < 1e-6:
        return
    dp = metrics.d_prime_sample(d)
    assert np.sign(dp) == np.sign(d.mean()) or abs(d.mean()) < 1e-12
    assert metrics.d_prime_sample(d * scale) == pytest.approx(dp, rel=1e-6, abs=1e-9)


def test_d_prime_standard_error_over_samples():
    rng = np.random.default_rng(0)
    data = rng.normal(0.3, 0.1, size=(10, 20, 4))
    dp = metrics.d_prime(data)
    per = data.mean(axis=1) / data.std(axis=1)
    assert np.allclose(dp.mean, per.mean(axis=0))
    assert np.allclose(dp.se, per.std(axis=0, ddof=1) / np.sqrt(10))


def test_raw_difference_examples():
    real = np.ones((10, 20))
    pseudo = np.full((10, 20), 0.19)
    mean, se, _ = metrics.raw_difference(real, pseudo)
    assert mean == pytest.approx(0.81)
    assert se == pytest.approx(0.0)
    rng = np.random.default_rng(1)
    a = rng.random((10, 20))
    b = rng.random((10, 20))
    assert abs(metrics.raw_difference(a, b)[0]) < 0.1


def test_exp_regression_exact_data():
    a = np.arange(1, 201)
    fit = metrics.exp_regression(0.8 * np.exp(-0.01 * (a - 1)))
    assert fit.C == pytest.approx(0.8, abs=1e-6)
    assert fit.beta == pytest.approx(0.01, abs=1e-6)
    assert fit.r2 == pytest.approx(1.0)


def test_exp_regression_recovers_theory_curve():
    a = np.arange(1, 1001)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rd = metrics.mhn_theory_rd(1000, 0.1, 100, 1.0, a)
        C, beta = metrics.mhn_theory_constants(1000, 0.1, 100, 1.0)
    fit = metrics.exp_regression(rd)
    assert abs(fit.C - C) / C < 1e-9
    assert abs(fit.beta - beta) / beta < 1e-9


def test_exp_regression_skips_nonpositive_and_needs_points():
    a = np.arange(1, 201)
    rd = 0.5 * np.exp(-0.02 * (a - 1))
    rd[::3] = -0.01
    fit = metrics.exp_regression(rd)
    assert fit.beta == pytest.approx(0.02, abs=1e-9)
    assert 1 not in fit.ages
    with pytest.raises(InsufficientDataError):
        metrics.exp_regression(np.r_[np.full(9, 0.5), np.zeros(300)])
    with pytest.raises(InsufficientDataError):
        metrics.exp_regression(np.array([]))


def test_theory_constants_match_published_values():
    C1, b1 = metrics.mhn_theory_constants(1000, 0.1, 100, 1.0)
    C5, b5 = metrics.mhn_theory_constants(1000, 0.1, 100, 0.5)
    assert C1 == pytest.approx(0.809, abs=5e-4)
    assert C5 == pytest.approx(0.836, abs=5e-4)
    assert b1 == b5 == pytest.approx(0.010050335853501, rel=1e-12)


def test_theory_baseline_values():
    # s_v + sqrt(2 c (1 - s_v) ln(n_h) / n_v), evaluated by hand
    assert metrics.mhn_theory_baseline(1000, 0.1, 100, 1.0) == pytest.approx(
        0.1 + math.sqrt(1.8 * math.log(100) / 1000))
    assert metrics.mhn_theory_baseline(1000, 0.1, 100, 1.0) == pytest.approx(0.191, abs=5e-4)
    assert metrics.mhn_theory_baseline(1000, 0.1, 100, 0.5) == pytest.approx(0.164, abs=5e-4)
    assert metrics.mhn_theory_baseline(1000, 0.1, 100, 1e-12) == pytest.approx(0.1, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10_000), st.floats(0.01, 1.0), st.floats(0.01, 0.5))
def test_theory_baseline_above_sparsity(n_h, c, s_v):
    assert metrics.mhn_theory_baseline(1000, s_v, n_h, c) > s_v


def test_theory_decays_to_zero():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert metrics.mhn_theory_rd(1000, 0.1, 100, 1.0, 1e6) < 1e-300


def test_low_cue_triggers_regime_warning():
    theta = metrics.cue_threshold(1000, 0.1, 100)
    assert 0 < theta < 0.5
    with pytest.warns(RuntimeWarning):
        metrics.mhn_theory_constants(1000, 0.1, 100, theta / 2)


def _welch_p(a, b):
    """Welch t-test p-value from the textbook formulas."""
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    dof = (va + vb) ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    return 2 * stats.t.sf(abs(t), dof)


def test_significance_flags_against_welch_oracle():
    rng = np.random.default_rng(2)
    a = 1.0 + 0.001 * rng.standard_normal(10)
    b = 3.0 + 0.001 * rng.standard_normal(10)
    assert _welch_p(a, b) < 0.01
    assert metrics.significance_segments(a, b) == -1
    assert metrics.significance_segments(b, a) == 1
    A = rng.normal(0, 1, size=(10, 50))
    B = rng.normal(0.5, 1.5, size=(10, 50))
    flags = metrics.significance_segments(A, B)
    for j in range(50):
        p = _welch_p(A[:, j], B[:, j])
        expect = 0 if p >= 0.01 else (1 if A[:, j].mean() > B[:, j].mean() else -1)
        assert flags[j] == expect


def test_significance_identical_and_degenerate_groups():
    a = np.linspace(0, 1, 10)
    assert metrics.significance_segments(a, a.copy()) == 0
    assert metrics.significance_segments(np.ones(10), np.ones(10)) == 0
    with pytest.raises(InsufficientDataError):
        metrics.significance_segments(np.ones(1), np.ones(1))


def test_significance_paired_option():
    rng = np.random.default_rng(4)
    base = rng.normal(0, 1, 10)
    a, b = base + 0.1, base + rng.normal(0, 0.01, 10)
    assert metrics.significance_segments(a, b, paired=True) == 1
    assert metrics.significance_segments(a, b) == 0


def test_segments_and_first_reliable_age():
    flags = np.array([0, 1, 1, 0, -1, 1, 1, 1, 1, 1, 1, 0])
    assert metrics.segments(flags) == [(1, 2, 3), (-1, 5, 5), (1, 6, 11)]
    assert metrics.first_reliable_age(flags, min_run=5) == 6
    assert metrics.first_reliable_age(flags, min_run=2) == 2
    assert metrics.first_reliable_age(flags, sign=-1, min_run=2) is None
    assert metrics.longest_run_fraction(flags, 1, 1, 12) == 0.5
