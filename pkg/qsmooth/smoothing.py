from __future__ import annotations

import logging
import math
from typing import Dict, List, Sequence

import numpy as np
from scipy.stats import norm

from qsmooth.errors import ArgumentError, DegenerateError
from qsmooth.limit_density import DensityEstimate, _check_coverage, _default_stride, scan_intervals
from qsmooth.pmf_core import LatticePmf, convolve_many, interval_prob, interval_probs, moments
from qsmooth.quicksort_dist import mean_recurrence
from qsmooth.schemas import (
    AzumaChainReport,
    BerryEsseenReport,
    ClassParams,
    EtaBound,
    HalfOpenInterval,
    PreconditionWarning,
    ScheduleParams,
    ScheduleRound,
    SmoothingReport,
    SmoothingStatement,
    SoftRound,
    SoftStart,
    TailBoundReport,
    TiltRatioReport,
)

logger = logging.getLogger(__name__)

SLOPE_BOUND = 2466.0
START_GAMMA = 17.0


def _warn(warnings: List[PreconditionWarning], clause: str, detail: str) -> None:
    logger.warning("Precondition %s: %s", clause, detail)
    warnings.append(PreconditionWarning(clause=clause, detail=detail))


def check_statement_S(
    pmf: LatticePmf,
    n: int,
    m: float,
    d: DensityEstimate,
    stride: int | None = None,
    target: SmoothingStatement | None = None,
) -> SmoothingReport:
    """Measure the smallest (eps, Gamma) for which S(n, m, eps, Gamma) holds on strided intervals.

    Clause (i) is evaluated at both x-ends and the midpoint of each interval;
    the slope allowance for the interior is returned as `certified_slack`.
    """
    q_n = mean_recurrence(n)[n]
    mean, _, _ = moments(pmf)
    if abs(mean - q_n) > 1e-6:
        raise ArgumentError(f"pmf mean {mean:.9g} is not q_{n} = {q_n:.9g}.")
    stride = stride or _default_stride(m)
    starts, probs = scan_intervals(pmf, m, stride)
    x_lo = (starts - q_n) / n
    x_hi = (starts + m - q_n) / n
    x_mid = 0.5 * (x_lo + x_hi)
    _check_coverage(d, x_mid, probs)

    scaled = probs * (n / m)
    eps_each = np.maximum.reduce([np.abs(scaled - d(x)) for x in (x_lo, x_mid, x_hi)])
    worst_i = int(np.argmax(eps_each))
    worst_ii = int(np.argmax(scaled))
    return SmoothingReport(
        n=n,
        m=m,
        stride=stride,
        measured_eps=float(eps_each[worst_i]),
        measured_gamma=float(scaled[worst_ii]),
        certified_slack=SLOPE_BOUND * (m / n) / 2.0,
        worst_interval_i=HalfOpenInterval(lo=float(starts[worst_i]), hi=float(starts[worst_i] + m)),
        worst_interval_ii=HalfOpenInterval(lo=float(starts[worst_ii]), hi=float(starts[worst_ii] + m)),
        target=target,
    )


def _subinterval_probs(pmf: LatticePmf, ell: float, lo: int, hi: int) -> np.ndarray:
    b = np.arange(lo, hi + 1, dtype=np.float64)
    return interval_probs(pmf, b, b + ell)


def window_flatness(
    pmf: LatticePmf,
    n: int,
    ell: float,
    m: float,
    stride: int | None = None,
) -> float:
    """max over windows J of (max - min over length-ell I in J of P(I)), divided by ell/n."""
    if ell > m:
        raise ArgumentError(f"Subinterval length {ell} exceeds window length {m}.")
    if ell <= 0:
        raise ArgumentError("Subinterval length must be positive.")
    stride = stride or _default_stride(m)
    width = int(math.floor(m - ell + 1e-9)) + 1
    if width <= 1:
        return 0.0
    first = pmf.support_min - 1 - math.ceil(m)
    last = pmf.support_max + 1
    sub = _subinterval_probs(pmf, ell, first, last + width)
    windows = np.lib.stride_tricks.sliding_window_view(sub, width)[: last - first + 1 : stride]
    spread = windows.max(axis=1) - windows.min(axis=1)
    return float(spread.max() * n / ell)


def averaging_check(
    pmf: LatticePmf,
    m: int,
    ell: int,
    window_starts: Sequence[int],
) -> bool:
    """min over I of P(I) <= (ell/m) P(J) <= max over I of P(I) for every J = (a, a+m].

    Needs integer lengths with ell dividing m so the partition of J into
    length-ell pieces is among the subintervals.
    """
    if ell <= 0 or m <= 0 or m % ell:
        raise ArgumentError(f"Averaging check needs positive integers with ell | m, got m={m}, ell={ell}.")
    for a in window_starts:
        sub = _subinterval_probs(pmf, ell, int(a), int(a) + m - ell)
        avg = (ell / m) * interval_prob(pmf, a, a + m)
        if not (sub.min() <= avg + 1e-12 and avg <= sub.max() + 1e-12):
            logger.info("Averaging inequality failed on window (%s, %s]", a, a + m)
            return False
    return True


def _bound(terms: Dict[str, float], C: float, warnings: List[PreconditionWarning]) -> EtaBound:
    dominant = max(terms, key=terms.get)
    return EtaBound(value=C * math.fsum(terms.values()), terms=terms, dominant=dominant, warnings=warnings)


def eta_core(
    n: float,
    m: float,
    ell: float,
    r: float,
    lam: float,
    C: float,
    c: float,
    *,
    r0: float = 20.0,
    C_prime: float = 2.0,
) -> EtaBound:
    if min(n, ell, r) <= 0:
        raise ArgumentError("eta_core needs positive n, ell and r.")
    warnings: List[PreconditionWarning] = []
    if not r0 <= r <= c * n:
        _warn(warnings, "r_range", f"r={r:g} outside [r0={r0:g}, c n={c * n:g}]")
    if not m >= ell >= C_prime * r:
        _warn(warnings, "scale_order", f"need m >= ell >= C' r, got m={m:g}, ell={ell:g}, C' r={C_prime * r:g}")
    if lam * m > math.sqrt(r * n):
        _warn(warnings, "lambda_m", f"lambda m = {lam * m:g} > sqrt(r n) = {math.sqrt(r * n):g}")
    terms = {
        "exp_lambda_term": math.exp(-c * lam * lam),
        "lambda_m_term": lam * m / math.sqrt(r * n),
        "r_over_ell_term": r / ell,
        "failure_term": (n / ell) * math.exp(-c * n / r),
    }
    return _bound(terms, C, warnings)


def eta_bin(n: float, m: float, lam: float, C: float, c: float) -> EtaBound:
    if n <= 0:
        raise ArgumentError("eta_bin needs positive n.")
    warnings: List[PreconditionWarning] = []
    root = math.sqrt(n)
    if lam * m > root:
        _warn(warnings, "lambda_m", f"lambda m = {lam * m:g} > sqrt(n) = {root:g}")
    elif math.isclose(lam * m, root, rel_tol=1e-12):
        _warn(warnings, "lambda_m_boundary", f"lambda m = sqrt(n) = {root:g}")
    if lam > c * root / 20.0:
        _warn(warnings, "lambda_cap", f"lambda = {lam:g} > c sqrt(n)/20 = {c * root / 20.0:g}")
    terms = {
        "exp_lambda_term": math.exp(-c * lam * lam),
        "lambda_m_term": lam * m / root,
        "failure_term": n * math.exp(-c * n),
    }
    return _bound(terms, C, warnings)


def schedule_rounds_count(n: int) -> int:
    """K = floor(log2(n)/2) + 1."""
    return (int(n).bit_length() - 1) // 2 + 1


def schedule(
    n: int,
    C_start: float = 1.0,
    C_hat: float = 0.002,
    *,
    C_tilde: float = SLOPE_BOUND,
) -> ScheduleParams:
    """Round parameters of the halving cascade from m_1 = 2 C n^(5/6) down to m_K ~ n^(1/3)."""
    if n < 4:
        raise ArgumentError(f"Schedule needs n >= 4, got {n}.")
    K = schedule_rounds_count(n)
    lam = math.log(n)
    m = 4.0 * C_start * n ** (5.0 / 6.0) / 2.0
    eps = (C_start + C_tilde * C_start) * n ** (-1.0 / 6.0)
    gamma = START_GAMMA
    rounds: List[ScheduleRound] = []
    for k in range(1, K + 1):
        ell = m / 2.0
        r = (m * ell) ** (2.0 / 3.0) / n ** (1.0 / 3.0)
        eta = C_hat * 2.0 ** (-k / 3.0) * n ** (-1.0 / 18.0) * lam
        rounds.append(
            ScheduleRound(
                k=k, m=m, ell=ell, r=r, lam=lam, eta=eta, eps=eps, gamma=gamma,
                lambda_m_over_sqrt_rn=lam * m / math.sqrt(r * n),
                r_over_ell=r / ell,
            )
        )
        eps, gamma, m = eps + gamma * eta, gamma * (1.0 + eta), ell
    final_ratio = rounds[-1].m / n ** (1.0 / 3.0)
    if not 2.0 * C_start * (1 - 1e-9) <= final_ratio < 4.0 * C_start * (1 + 1e-9):
        logger.warning("Final scale m_K = %g n^(1/3) is outside [2C, 4C) n^(1/3)", final_ratio)
    return ScheduleParams(
        n=n,
        K=K,
        C_start=C_start,
        C_hat=C_hat,
        rounds=rounds,
        eta_sum=math.fsum(rd.eta for rd in rounds[:-1]),
        final_eps=eps,
        final_gamma=gamma,
    )


def soft_schedule(n: float, omega0: float) -> List[SoftRound]:
    if not 1.0 < omega0 <= n ** 0.9:
        raise ArgumentError(f"omega0 must lie in (1, n^0.9], got {omega0:g} for n={n:g}.")
    rounds: List[SoftRound] = []
    omega = float(omega0)
    stop = n ** 0.4
    i = 0
    while True:
        ell = n / omega ** 1.5
        m = n / omega
        r = n / omega ** 1.8
        rounds.append(
            SoftRound(
                i=i, omega=omega, m=m, ell=ell, r=r, lam=math.log(omega),
                m_over_sqrt_rn=m / math.sqrt(r * n),
                r_over_ell=r / ell,
            )
        )
        if ell <= stop:
            return rounds
        omega, i = omega ** 1.5, i + 1


def soft_start_statement(n: int, delta: float, modulus: float, density_sup: float) -> SoftStart:
    """Seed of the soft cascade from a sup-norm CDF distance delta."""
    if not 0 < delta < 1:
        raise ArgumentError(f"Kolmogorov distance must lie in (0, 1), got {delta}.")
    root = math.sqrt(delta)
    return SoftStart(
        n=n,
        delta=delta,
        modulus=modulus,
        m0=n * root,
        eps0=2.0 * root + modulus,
        gamma0=density_sup + 1.0,
        omega0=1.0 / root,
    )


def tilt_ratio_check(
    X: LatticePmf,
    params: ClassParams,
    I1: HalfOpenInterval,
    I2: HalfOpenInterval,
    m: float,
    lam: float,
    *,
    K: float = 4.0,
    C_prime: float = 2.0,
    constant: float = 10.0,
) -> TiltRatioReport:
    ell = I1.length
    if not math.isclose(ell, I2.length, rel_tol=1e-12, abs_tol=1e-12):
        raise ArgumentError("Both subintervals must have the same length.")
    r, s = params.r, params.s
    scale = r * math.sqrt(s)
    warnings: List[PreconditionWarning] = []
    if lam < 1:
        _warn(warnings, "lambda", f"lambda = {lam:g} < 1")
    if not m >= ell >= C_prime * r:
        _warn(warnings, "scale_order", f"need m >= ell >= C' r, got m={m:g}, ell={ell:g}")
    if lam * m / scale > K:
        _warn(warnings, "lambda_m", f"lambda m/(r sqrt s) = {lam * m / scale:g} > K = {K:g}")
    hull_lo, hull_hi = min(I1.lo, I2.lo), max(I1.hi, I2.hi)
    if hull_hi - hull_lo > m * (1 + 1e-12):
        _warn(warnings, "window", f"intervals span {hull_hi - hull_lo:g} > m = {m:g}")
    if hull_lo < -K * lam * scale or hull_hi > K * lam * scale:
        _warn(warnings, "window_range", f"window leaves [-{K * lam * scale:g}, {K * lam * scale:g}]")

    p1 = interval_prob(X, I1.lo, I1.hi)
    if p1 <= 0:
        raise DegenerateError(f"P(X in ({I1.lo:g}, {I1.hi:g}]) = 0; ratio undefined.")
    ratio = interval_prob(X, I2.lo, I2.hi) / p1
    r_over_ell = r / ell
    lambda_m_term = lam * m / scale
    bound = constant * (r_over_ell + lambda_m_term)
    return TiltRatioReport(
        ratio=ratio,
        deviation=abs(ratio - 1.0),
        r_over_ell=r_over_ell,
        lambda_m_term=lambda_m_term,
        bound=bound,
        passed=abs(ratio - 1.0) <= bound,
        warnings=warnings,
    )


def tail_bound_check(
    X: LatticePmf,
    params: ClassParams,
    t: float,
    ell: float,
    *,
    C: float = 10.0,
    c: float = 1.0 / 32.0,
) -> TailBoundReport:
    """P(X in [t, t+ell]) against (C ell/(r sqrt s)) exp(-c t^2/(r^2 s))."""
    r, s = params.r, params.s
    if t < 0:
        raise ArgumentError(f"Tail start t must be non-negative, got {t}.")
    if ell < r:
        raise ArgumentError(f"Tail window ell={ell} must be at least r={r}.")
    measured = float(X.cdf(t + ell) - X.cdf(math.ceil(t) - 1))
    bound = C * ell / (r * math.sqrt(s)) * math.exp(-c * t * t / (r * r * s))
    return TailBoundReport(t=t, ell=ell, measured=measured, bound=bound, passed=measured <= bound)


def azuma_bound(increment_spans: Sequence[float], a: float) -> float:
    """exp(-2 a^2 / sum(span_i^2)) for a martingale with bounded increments."""
    if a < 0:
        raise ArgumentError(f"Deviation a must be non-negative, got {a}.")
    spans = np.asarray(increment_spans, dtype=np.float64)
    if np.any(spans < 0):
        raise ArgumentError("Increment spans must be non-negative.")
    if a == 0:
        return 1.0
    total = float(np.dot(spans, spans))
    if total == 0:
        return 0.0
    return math.exp(-2.0 * a * a / total)


def azuma_concentration_chain(n: int, r: int) -> AzumaChainReport:
    """Hoeffding plus Azuma pieces behind the tail bound on the number of medium sublists.

    Within t0 = ceil(20n/r) steps at most t0/2 may be inactive
    (Hoeffding on Bi(t0, 3/10)); the martingale over those steps has
    increments of span 2 and must deviate by n/(3r).
    """
    if r <= 0 or n <= 0:
        raise ArgumentError("Chain bound needs positive n and r.")
    t0 = math.ceil(20 * n / r)
    hoeffding = math.exp(-2.0 * t0 / 25.0)
    azuma = azuma_bound([2.0] * t0, n / (3.0 * r))
    target = math.exp(-n / (400.0 * r))
    return AzumaChainReport(
        n=n,
        r=r,
        t0=t0,
        hoeffding_term=hoeffding,
        azuma_term=azuma,
        total=hoeffding + azuma,
        target=target,
        passed=hoeffding + azuma <= target,
    )


def berry_esseen_check(components: Sequence[LatticePmf], A: float = 0.56) -> BerryEsseenReport:
    if not components:
        raise ArgumentError("Berry-Esseen check needs at least one component.")
    S = convolve_many(components)
    mu, variance, _ = moments(S)
    if variance <= 0:
        raise DegenerateError("The sum has zero variance.")
    sigma = math.sqrt(variance)
    rho = math.fsum(moments(comp)[2] for comp in components)
    z = (S.points - mu) / sigma
    phi = norm.cdf(z)
    after = np.cumsum(S.probs)
    before = after - S.probs
    sup_dist = float(max(np.max(np.abs(after - phi)), np.max(np.abs(before - phi))))
    bound = A * rho / sigma ** 3
    return BerryEsseenReport(sup_dist=sup_dist, bound=bound, rho=rho, sigma=sigma, passed=sup_dist <= bound)


def binomial_ratio(s: int, p: float, k: int) -> float:
    """P(B = k+1)/P(B = k) for B ~ Bi(s, p)."""
    if not 0 <= k <= s - 1:
        raise ArgumentError(f"k must lie in [0, s-1], got k={k}, s={s}.")
    if not 0 < p < 1:
        raise ArgumentError(f"p must lie in (0, 1), got {p}.")
    return (s - k) / (k + 1) * (p / (1.0 - p))
