import math
import os
import sys

import numpy as np
import pytest
from scipy.stats import norm

# Add repo root to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from qsmooth.errors import ArgumentError, DegenerateError
from qsmooth.limit_density import estimate_density_fixed_point
from qsmooth.pmf_core import LatticePmf, convolve_many, delta, from_point_masses
from qsmooth.quicksort_dist import exact_pmf
from qsmooth.schemas import ClassParams, GridSpec, HalfOpenInterval
from qsmooth.smoothing import (
    averaging_check,
    azuma_bound,
    azuma_concentration_chain,
    berry_esseen_check,
    binomial_ratio,
    check_statement_S,
    eta_bin,
    eta_core,
    schedule,
    schedule_rounds_count,
    soft_schedule,
    soft_start_statement,
    tail_bound_check,
    tilt_ratio_check,
    window_flatness,
)

SIGN = from_point_masses([(-1, 1.0), (1, 1.0)])


def _uniform(r):
    return from_point_masses((k, 1.0) for k in range(-r, r + 1))


@pytest.fixture(scope="module")
def limit_density():
    return estimate_density_fixed_point(GridSpec(step=0.01), iterations=12, seed=1, nodes=32)


def test_statement_on_exact_law(limit_density):
    """The statement check on Q_128 reports Gamma, eps and the slope slack."""
    n = 128
    m = 2.0 * n ** (5.0 / 6.0)
    report = check_statement_S(exact_pmf(n), n, m, limit_density)
    assert report.measured_gamma <= 17.0
    assert report.measured_eps > 0.0
    assert report.certified_slack == pytest.approx(2466.0 * (m / n) / 2.0)
    assert report.worst_interval_i.length == pytest.approx(m)
    assert report.holds is None


def test_statement_requires_centred_law(limit_density):
    """Laws whose mean is off q_n by more than 1e-6 are rejected."""
    with pytest.raises(ArgumentError):
        check_statement_S(exact_pmf(64).shifted(5), 64, 20.0, limit_density)
    pmf = exact_pmf(64)
    probs = np.array(pmf.probs)
    mode = int(np.argmax(probs))
    probs[mode] -= 1e-4
    probs[mode + 1] += 1e-4
    # the mean moves by 1e-4, well inside a relative tolerance on q_64
    with pytest.raises(ArgumentError):
        check_statement_S(LatticePmf(pmf.offset, probs), 64, 20.0, limit_density)


def test_window_flatness_of_point_mass():
    """Flatness of a point mass depends on whether sub-intervals can miss it."""
    assert window_flatness(delta(100), 256, 5.0, 20.0) == pytest.approx(51.2)
    assert window_flatness(delta(100), 256, 20.0, 20.0) == 0.0
    with pytest.raises(ArgumentError):
        window_flatness(delta(100), 256, 30.0, 20.0)


def test_averaging_inequality():
    """The averaging inequality holds on Q_64 and needs ell dividing m."""
    pmf = exact_pmf(64)
    starts = range(pmf.support_min - 20, pmf.support_max, 7)
    assert averaging_check(pmf, 20, 5, starts)
    with pytest.raises(ArgumentError):
        averaging_check(pmf, 20, 6, starts)


def test_eta_core_terms_and_warnings():
    """eta_core sums its four terms and warns when r leaves its range."""
    bound = eta_core(1e6, 1000.0, 1000.0, 100.0, 2.0, C=2.0, c=0.01)
    assert set(bound.terms) == {"exp_lambda_term", "lambda_m_term", "r_over_ell_term", "failure_term"}
    assert bound.value == pytest.approx(2.0 * math.fsum(bound.terms.values()))
    assert bound.terms["r_over_ell_term"] == pytest.approx(0.1)
    assert bound.warnings == []

    low_r = eta_core(1e6, 1000.0, 1000.0, 10.0, 2.0, C=2.0, c=0.01)
    assert [w.clause for w in low_r.warnings] == ["r_range"]


def test_eta_bin_warnings():
    """eta_bin flags the lambda m boundary and the lambda cap."""
    ok = eta_bin(10_000, 10.0, 2.0, C=1.0, c=1.0)
    assert ok.warnings == []
    assert set(ok.terms) == {"exp_lambda_term", "lambda_m_term", "failure_term"}
    boundary = eta_bin(10_000, 50.0, 2.0, C=1.0, c=1.0)
    assert [w.clause for w in boundary.warnings] == ["lambda_m_boundary"]
    capped = eta_bin(10_000, 1.0, 6.0, C=1.0, c=1.0)
    assert [w.clause for w in capped.warnings] == ["lambda_cap"]


def test_schedule_rounds():
    """Round parameters of the cascade at n = 4096."""
    n = 2 ** 12
    assert schedule_rounds_count(4) == 2
    assert schedule_rounds_count(n) == 7
    params = schedule(n)
    assert params.K == 7
    assert params.rounds[0].m == pytest.approx(2048.0)
    assert params.rounds[-1].m / n ** (1.0 / 3.0) == pytest.approx(2.0)
    assert params.eta_sum == pytest.approx(sum(rd.eta for rd in params.rounds[:-1]))
    assert params.final_gamma <= 18.0
    for rd in params.rounds:
        assert rd.ell == pytest.approx(rd.m / 2.0)
        decay = 2.0 ** (-rd.k / 3.0) * n ** (-1.0 / 18.0)
        assert rd.lambda_m_over_sqrt_rn / (decay * math.log(n)) == pytest.approx(2.0)
        assert rd.r_over_ell / decay == pytest.approx(2.0)
    with pytest.raises(ArgumentError):
        schedule(3)


def test_soft_schedule():
    """The soft schedule squares omega^(1/2) until ell drops below n^0.4."""
    n = 1e6
    rounds = soft_schedule(n, 10.0)
    assert n ** 0.1 <= rounds[-1].ell <= n ** 0.4
    assert all(rd.ell > n ** 0.4 for rd in rounds[:-1])
    for before, after in zip(rounds, rounds[1:]):
        assert after.omega == pytest.approx(before.omega ** 1.5)
    with pytest.raises(ArgumentError):
        soft_schedule(n, 1.0)
    with pytest.raises(ArgumentError):
        soft_schedule(n, n)


def test_soft_start_statement():
    """The soft start is derived from a Kolmogorov distance."""
    start = soft_start_statement(1000, 0.04, 0.1, 1.0)
    assert start.m0 == pytest.approx(200.0)
    assert start.eps0 == pytest.approx(0.5)
    assert start.gamma0 == pytest.approx(2.0)
    assert start.omega0 == pytest.approx(5.0)
    with pytest.raises(ArgumentError):
        soft_start_statement(1000, 1.0, 0.1, 1.0)


def test_tilt_ratio_decreases_with_more_summands():
    """The tilted-interval ratio approaches 1 as s grows."""
    deviations = []
    for s in (100, 400, 1600):
        X = convolve_many([_uniform(5)] * s)
        report = tilt_ratio_check(
            X, ClassParams(r=5, s=s, c1=0.5),
            HalfOpenInterval(lo=-20.0, hi=0.0), HalfOpenInterval(lo=0.0, hi=20.0),
            m=40.0, lam=1.0,
        )
        assert report.passed
        deviations.append(report.deviation)
    assert deviations[0] > deviations[1] > deviations[2]


def test_tilt_ratio_identical_and_degenerate():
    """Identical intervals give ratio 1; empty or unequal intervals raise."""
    X = convolve_many([_uniform(5)] * 10)
    params = ClassParams(r=5, s=10, c1=0.5)
    same = HalfOpenInterval(lo=-10.0, hi=0.0)
    report = tilt_ratio_check(X, params, same, same, m=20.0, lam=1.0)
    assert report.ratio == 1.0
    assert report.deviation == 0.0
    with pytest.raises(ArgumentError):
        tilt_ratio_check(X, params, same, HalfOpenInterval(lo=0.0, hi=5.0), m=20.0, lam=1.0)
    with pytest.raises(DegenerateError):
        tilt_ratio_check(
            X, params, HalfOpenInterval(lo=1000.0, hi=1010.0), same, m=20.0, lam=1.0
        )


def test_tail_bound():
    """The tail bound holds at three thresholds and validates t and ell."""
    X = convolve_many([_uniform(5)] * 400)
    params = ClassParams(r=5, s=400, c1=0.5)
    for t in (0.0, 100.0, 200.0):
        assert tail_bound_check(X, params, t, 5.0).passed
    with pytest.raises(ArgumentError):
        tail_bound_check(X, params, -1.0, 5.0)
    with pytest.raises(ArgumentError):
        tail_bound_check(X, params, 0.0, 4.0)


def test_azuma_bound():
    """Azuma's inequality for equal spans."""
    assert azuma_bound([2.0] * 100, 20.0) == pytest.approx(math.exp(-2.0))
    assert azuma_bound([2.0] * 100, 0.0) == 1.0
    with pytest.raises(ArgumentError):
        azuma_bound([2.0], -1.0)


def test_azuma_chain():
    """The Hoeffding plus Azuma chain meets its target at n = 4000, r = 20."""
    report = azuma_concentration_chain(4000, 20)
    assert report.t0 == 4000
    assert report.azuma_term == pytest.approx(math.exp(-5.0 / 9.0))
    assert report.target == pytest.approx(math.exp(-0.5))
    assert report.passed


def test_berry_esseen():
    """Berry-Esseen bound and distance for sums of signs."""
    report = berry_esseen_check([SIGN] * 400)
    assert report.bound == pytest.approx(0.028)
    assert report.passed
    single = berry_esseen_check([SIGN])
    assert single.sup_dist == pytest.approx(norm.cdf(1.0) - 0.5)
    with pytest.raises(DegenerateError):
        berry_esseen_check([delta(0)])


def test_binomial_ratio():
    """Consecutive binomial probability ratios and their index range."""
    assert binomial_ratio(10, 0.5, 0) == pytest.approx(10.0)
    assert binomial_ratio(10, 0.25, 4) == pytest.approx(6.0 / 5.0 / 3.0)
    with pytest.raises(ArgumentError):
        binomial_ratio(10, 0.5, 10)


def test_binomial_ratio_examples_and_product():
    """Consecutive ratios match the worked examples and telescope to (p/(1-p))^s."""
    assert binomial_ratio(3, 2.0 / 3.0, 1) == pytest.approx(2.0)
    assert binomial_ratio(3, 2.0 / 3.0, 2) == pytest.approx(2.0 / 3.0)
    for s, p in ((3, 2.0 / 3.0), (12, 0.3), (40, 0.55)):
        product = math.prod(binomial_ratio(s, p, k) for k in range(s))
        assert product == pytest.approx((p / (1.0 - p)) ** s, rel=1e-12)


def test_eta_core_monotone_and_dominant_terms():
    """eta_core falls as ell grows, rises with m, and names the largest term."""
    by_ell = [eta_core(1e6, 1000.0, ell, 100.0, 2.0, C=2.0, c=0.01).value for ell in (200.0, 500.0, 1000.0)]
    assert by_ell[0] > by_ell[1] > by_ell[2]
    by_m = [eta_core(1e6, m, 1000.0, 100.0, 2.0, C=2.0, c=0.01).value for m in (1000.0, 2000.0, 4000.0)]
    assert by_m[0] < by_m[1] < by_m[2]

    assert eta_core(1e6, 1000.0, 1000.0, 100.0, 2.0, C=2.0, c=0.01).dominant == "exp_lambda_term"
    assert eta_core(1e6, 200.0, 200.0, 90.0, 15.0, C=1.0, c=0.01).dominant == "r_over_ell_term"
    assert eta_core(1e6, 600.0, 200.0, 90.0, 15.0, C=1.0, c=0.01).dominant == "lambda_m_term"
    assert eta_core(1000, 40.0, 40.0, 20.0, 15.0, C=1.0, c=0.01).dominant == "failure_term"


def test_eta_bin_monotone_and_dominant_terms():
    """eta_bin falls with n, rises with m, and names the largest term."""
    assert eta_bin(1e6, 10.0, 2.0, C=1.0, c=1.0).value < eta_bin(1e4, 10.0, 2.0, C=1.0, c=1.0).value
    assert eta_bin(1e4, 5.0, 2.0, C=1.0, c=1.0).value < eta_bin(1e4, 10.0, 2.0, C=1.0, c=1.0).value
    assert eta_bin(1e4, 10.0, 2.0, C=1.0, c=1.0).dominant == "lambda_m_term"
    assert eta_bin(1e4, 1.0, 1.0, C=1.0, c=0.1).dominant == "exp_lambda_term"
    assert eta_bin(20, 1.0, 1.0, C=1.0, c=0.1).dominant == "failure_term"


@pytest.mark.parametrize("exponent", [10, 12, 16])
def test_schedule_integrity(exponent):
    """K rounds, ell dividing m, a final scale near n^(1/3) and Gamma kept at or below 18."""
    n = 2 ** exponent
    params = schedule(n)
    assert params.K == exponent // 2 + 1
    assert len(params.rounds) == params.K
    for rd in params.rounds:
        assert rd.m / rd.ell == pytest.approx(2.0)
        assert rd.gamma <= 18.0
    ratio = params.rounds[-1].m / n ** (1.0 / 3.0)
    assert 0.25 <= ratio <= 4.0
    assert params.final_gamma <= 18.0


def test_statement_error_does_not_grow_with_n(limit_density):
    """The measured eps at n = 256 is within the regression slack of the one at n = 128."""
    eps = []
    for n in (128, 256):
        m = 2.0 * n ** (5.0 / 6.0)
        eps.append(check_statement_S(exact_pmf(n), n, m, limit_density).measured_eps)
    assert eps[1] <= 1.2 * eps[0]


def test_averaging_inequality_on_random_windows():
    """At n = 256 every sampled window average lies between its sub-interval extremes."""
    pmf = exact_pmf(256)
    rng = np.random.default_rng(8)
    for _ in range(1000):
        ell = int(rng.integers(1, 41))
        m = ell * int(rng.integers(1, 9))
        start = int(rng.integers(pmf.support_min - m, pmf.support_max + 1))
        assert averaging_check(pmf, m, ell, [start])
