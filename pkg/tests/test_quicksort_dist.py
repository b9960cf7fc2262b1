import math
import os
import sys

import numpy as np
import pytest
from scipy.stats import chisquare

# Add repo root to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from qsmooth.errors import ArgumentError, SizeError
from qsmooth.pmf_core import moments
from qsmooth.quicksort_dist import (
    brute_force_pmf,
    estimate_c1,
    exact_pmf,
    mean_closed_form,
    mean_recurrence,
    min_comparisons,
    normalized,
    qn_table,
    sample_exact,
    sample_qn,
    sample_qn_batch,
    variance_closed_form,
)


def test_mean_recurrence_small_values():
    """q_0 .. q_3 from the mean recurrence."""
    means = mean_recurrence(4)
    assert means[0] == 0.0
    assert means[1] == 0.0
    assert means[2] == pytest.approx(1.0)
    assert means[3] == pytest.approx(8.0 / 3.0)


def test_mean_recurrence_matches_closed_form():
    """The recurrence agrees with 2(n+1)H_n - 4n up to n = 256."""
    means = mean_recurrence(256)
    for n in (1, 2, 10, 57, 200, 256):
        assert means[n] == pytest.approx(mean_closed_form(n), rel=1e-12, abs=1e-12)


def test_base_cases_are_point_masses():
    """Q_0 and Q_1 are point masses at zero."""
    for n in (0, 1):
        pmf = exact_pmf(n)
        assert pmf.support_min == pmf.support_max == 0


def test_exact_law_of_three():
    """Q_3 is 2 w.p. 1/3 and 3 w.p. 2/3."""
    pmf = exact_pmf(3)
    assert pmf.support_min == 2
    assert pmf.pmf_at([2, 3]) == pytest.approx([1 / 3, 2 / 3])


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6, 7, 8])
def test_exact_matches_enumeration(n):
    """Every ordering of n keys, sorted with first-element pivots, gives the same law."""
    exact = exact_pmf(n)
    brute = brute_force_pmf(n)
    points = np.arange(0, n * (n - 1) // 2 + 1)
    assert np.max(np.abs(exact.pmf_at(points) - brute.pmf_at(points))) <= 1e-12


@pytest.mark.parametrize("n", [10, 50, 100, 256])
def test_exact_moments(n):
    """Mean and variance of the exact law match the closed forms."""
    mean, variance, _ = moments(exact_pmf(n))
    assert mean == pytest.approx(mean_recurrence(n)[n], rel=1e-10)
    assert variance == pytest.approx(variance_closed_form(n), rel=1e-8)


def test_variance_closed_form_small_values():
    """Closed-form variance at n = 1, 2, 3."""
    assert variance_closed_form(1) == 0.0
    assert variance_closed_form(2) == pytest.approx(0.0, abs=1e-12)
    assert variance_closed_form(3) == pytest.approx(2.0 / 9.0)


def test_support_ends():
    """The support runs from the balanced minimum to n(n-1)/2."""
    assert min_comparisons(16) == 38
    pmf = exact_pmf(32)
    assert pmf.support_min == min_comparisons(32)
    assert pmf.support_max == 32 * 31 // 2
    assert pmf.probs[-1] == pytest.approx(2.0 ** 31 / math.factorial(32), rel=1e-6)


def test_caps():
    """Exact and enumeration caps raise SizeError."""
    with pytest.raises(SizeError):
        exact_pmf(513)
    with pytest.raises(SizeError):
        brute_force_pmf(10)
    with pytest.raises(ArgumentError):
        exact_pmf(-1)


def test_qn_table_rows():
    """Summary rows carry mean, variance and support ends."""
    table = qn_table(12)
    rows = table.summary_rows()
    assert len(rows) == 13
    n, q_n, variance, lo, hi = rows[12]
    assert n == 12
    assert q_n == pytest.approx(mean_closed_form(12))
    assert variance == pytest.approx(variance_closed_form(12), rel=1e-9)
    assert (lo, hi) == (min_comparisons(12), 66)


def test_single_run_is_reproducible():
    """A seeded run repeats exactly and stays on the support."""
    first = sample_qn(40, seed=11)
    assert first == sample_qn(40, seed=11)
    assert min_comparisons(40) <= first <= 40 * 39 // 2


def test_batch_does_not_depend_on_threads():
    """Batch draws are identical for one and four workers."""
    one = sample_qn_batch(100, 3000, seed=7, threads=1)
    four = sample_qn_batch(100, 3000, seed=7, threads=4)
    assert np.array_equal(one, four)


def test_batch_mean_is_close_to_q_n():
    """The batch mean is within five standard errors of q_n."""
    n, size = 200, 20_000
    draws = sample_qn_batch(n, size, seed=3)
    assert draws.shape == (size,)
    standard_error = math.sqrt(variance_closed_form(n) / size)
    assert abs(draws.mean() - mean_recurrence(n)[n]) < 5 * standard_error


def _chisquare_against(pmf, draws):
    observed = np.array([np.count_nonzero(draws == x) for x in range(pmf.support_min, pmf.support_max + 1)])
    expected = pmf.probs * draws.size
    # pool the sparse cells into one
    keep = expected >= 5
    obs = np.append(observed[keep], observed[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum())
    if exp[-1] == 0:
        obs, exp = obs[:-1], exp[:-1]
    return chisquare(obs, exp * obs.sum() / exp.sum())


def test_single_runs_follow_the_exact_law():
    """Independent seeded runs of the simulator match exact_pmf(6)."""
    draws = np.array([sample_qn(6, seed=i) for i in range(100_000)])
    assert _chisquare_against(exact_pmf(6), draws).pvalue > 1e-4


def test_batch_draws_follow_the_exact_law():
    """Level-by-level batch draws at n = 100 match exact_pmf(100)."""
    draws = sample_qn_batch(100, 100_000, seed=21)
    assert _chisquare_against(exact_pmf(100), draws).pvalue > 1e-4


def test_sample_exact_stays_on_the_support():
    """Inverse-CDF draws land on the support and hit both ends."""
    pmf = exact_pmf(5)
    draws = sample_exact(5, 20_000, seed=5)
    assert draws.min() == pmf.support_min
    assert draws.max() == pmf.support_max
    assert np.array_equal(draws, sample_exact(5, 20_000, seed=5))


def test_variance_grows_towards_the_limit():
    """Var(Q_n)/n^2 increases with n and stays below 7 - 2 pi^2/3."""
    limit = 7.0 - 2.0 * math.pi ** 2 / 3.0
    ratios = [variance_closed_form(n) / n ** 2 for n in (32, 64, 128, 256)]
    assert all(a < b for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] < limit
    assert ratios[-1] == pytest.approx(limit, abs=0.05)


def test_normalized_view():
    """The normalised view is centred and its window probabilities are consistent."""
    view = normalized(64)
    assert view.mean() == pytest.approx(0.0, abs=1e-9)
    assert view.window_prob(-10.0, 40.0) == pytest.approx(1.0)
    assert view.window_prob(0.5, 0.4) == 0.0
    with pytest.raises(ArgumentError):
        normalized(0)


def test_estimate_c1():
    """estimate_c1 returns a probability and rejects an empty range."""
    value = estimate_c1([64, 128])
    assert 0.0 <= value < 0.5
    with pytest.raises(ArgumentError):
        estimate_c1([])
