from __future__ import annotations

import logging
import math
from typing import Dict, List, Sequence

import numpy as np

from qsmooth.errors import ArgumentError
from qsmooth.execution_tree import (
    DecompositionSample,
    count_medium_sublists,
    run_phase1,
    sample_binomial_decomposition,
    sample_decomposition,
    sample_truncated_decomposition,
    truncated_part_law,
    xi,
)
from qsmooth.limit_density import (
    DensityEstimate,
    density_bounds_check,
    estimate_density_fixed_point,
    llt_deviation,
    semi_local_check,
)
from qsmooth.pmf_core import LatticePmf, convolve_many, from_point_masses, is_in_class_Dr
from qsmooth.quicksort_dist import exact_pmf
from qsmooth.schemas import (
    ClassParams,
    FittedConstants,
    HalfOpenInterval,
    LltRow,
    VerificationReport,
)
from qsmooth.seeding import ordered_map, split_seed
from qsmooth.smoothing import (
    azuma_concentration_chain,
    berry_esseen_check,
    check_statement_S,
    tail_bound_check,
    tilt_ratio_check,
)

logger = logging.getLogger(__name__)


def uniform_lattice(r: int) -> LatticePmf:
    """Uniform law on {-r, ..., r}."""
    return from_point_masses((k, 1.0) for k in range(-r, r + 1))


def _ensemble(fn, seed: int, seeds: int, threads: int) -> list:
    if seeds < 1:
        raise ArgumentError(f"Ensemble needs at least one seed, got {seeds}.")
    return ordered_map(lambda i: fn(split_seed(seed, i)), range(seeds), threads=threads)


def _accounting_violations(samples: Sequence[DecompositionSample]) -> int:
    bad = 0
    for sample in samples:
        extra = 2 * len(sample.B_parts) if sample.kind.value == "binomial" else 0
        if sample.A + sample.B_total + extra != sample.total:
            bad += 1
    return bad


class VerificationService:
    @staticmethod
    def medium_count_tail(n: int, r: int, seeds: int, seed: int, threads: int = 1) -> VerificationReport:
        counts = _ensemble(
            lambda s: count_medium_sublists(run_phase1(n, r, s), r), seed, seeds, threads
        )
        counts = np.asarray(counts, dtype=np.float64)
        frequency = float(np.mean(counts <= n / (3.0 * r)))
        bound = math.exp(-n / (400.0 * r))
        chain = azuma_concentration_chain(n, r)
        expected = xi(n, r)
        mean_gap = abs(float(counts.mean()) - expected) / expected if expected else 0.0
        return VerificationReport(
            target="medium-count-tail",
            passed=frequency <= bound and chain.passed,
            measured={"tail_frequency": frequency, "mean_count": float(counts.mean()), "mean_relative_gap": mean_gap},
            bound={"tail": bound, "xi": expected},
            details={"n": n, "r": r, "seeds": seeds, "seed": seed, "chain": chain.model_dump()},
        )

    @staticmethod
    def plain_split(n: int, r: int, seeds: int, seed: int, threads: int = 1) -> VerificationReport:
        samples: List[DecompositionSample] = _ensemble(
            lambda s: sample_decomposition(n, r, s), seed, seeds, threads
        )
        failure = float(np.mean([not sample.E_occurred for sample in samples]))
        bound = math.exp(-n / (400.0 * r))
        s_required = math.ceil(n / (3 * r))
        shape_ok = all(
            len(sample.B_parts) == s_required and all(r / 2 <= ri <= r for ri in sample.part_scales)
            for sample in samples if sample.E_occurred
        )
        violations = _accounting_violations(samples)
        return VerificationReport(
            target="plain-split",
            passed=failure <= bound and violations == 0 and shape_ok,
            measured={"failure_frequency": failure, "accounting_violations": float(violations)},
            bound={"failure": bound},
            details={"n": n, "r": r, "s": s_required, "seeds": seeds, "seed": seed},
        )

    @staticmethod
    def truncated_split(
        n: int,
        r: int,
        seeds: int,
        seed: int,
        constants: FittedConstants,
        c2: float | None = None,
        threads: int = 1,
    ) -> VerificationReport:
        c2 = constants.effective_c2 if c2 is None else c2
        samples: List[DecompositionSample] = _ensemble(
            lambda s: sample_truncated_decomposition(n, r, constants.c1, c2, s, r0=constants.r0),
            seed, seeds, threads,
        )
        params = ClassParams(r=r, s=1, c1=constants.c1)
        class_failures = 0
        range_failures = 0
        for sample in samples:
            for scale, value in zip(sample.part_scales, sample.centered_parts()):
                law, z = truncated_part_law(scale)
                if not is_in_class_Dr(law, params, center=z).passed:
                    class_failures += 1
                if abs(value) > 4 * r:
                    range_failures += 1
        conditioned = sum(sample.E_occurred for sample in samples)
        t = math.ceil(n / (3 * r))
        selected = max(1, sum(t for sample in samples if sample.medium_count >= t))
        hit_fraction = sum(sample.event_hits for sample in samples) / selected
        return VerificationReport(
            target="truncated-split",
            passed=class_failures == 0 and range_failures == 0 and _accounting_violations(samples) == 0,
            measured={
                "class_failures": float(class_failures),
                "range_failures": float(range_failures),
                "conditioned_samples": float(conditioned),
                "event_fraction": hit_fraction,
            },
            bound={"event_fraction_floor": 2 * constants.c1},
            details={"n": n, "r": r, "c1": constants.c1, "c2": c2, "seeds": seeds, "seed": seed},
        )

    @staticmethod
    def binomial_split(n: int, c: float, seeds: int, seed: int, constants: FittedConstants, threads: int = 1) -> VerificationReport:
        samples: List[DecompositionSample] = _ensemble(
            lambda s: sample_binomial_decomposition(
                n, c, s, n0=constants.binomial_n0, c_max=constants.binomial_c_max
            ),
            seed, seeds, threads,
        )
        target = math.ceil(c * n)
        good = [sample.B_total for sample in samples if sample.E_occurred]
        failure = 1.0 - len(good) / len(samples)
        expected = 2.0 * target / 3.0
        if good:
            mean_b = float(np.mean(good))
            band = 3.0 * math.sqrt(target * 2.0 / 9.0 / len(good))
        else:
            mean_b, band = float("nan"), 0.0
        return VerificationReport(
            target="binomial-split",
            passed=bool(good) and failure < 1e-3 and abs(mean_b - expected) <= band
            and _accounting_violations(samples) == 0,
            measured={"failure_frequency": failure, "conditional_mean": mean_b},
            bound={"failure": 1e-3, "expected_mean": expected, "band": band},
            details={"n": n, "c": c, "instances": target, "seeds": seeds, "seed": seed},
        )

    @staticmethod
    def normal_approx(s: int, r: int, constants: FittedConstants) -> VerificationReport:
        report = berry_esseen_check([uniform_lattice(r)] * s, A=constants.berry_esseen_A)
        return VerificationReport(
            target="normal-approx",
            passed=report.passed,
            measured={"sup_dist": report.sup_dist},
            bound={"berry_esseen": report.bound},
            details={"s": s, "r": r, "rho": report.rho, "sigma": report.sigma},
        )

    @staticmethod
    def tail_bound(s: int, r: int, ell: float, constants: FittedConstants) -> VerificationReport:
        X = convolve_many([uniform_lattice(r)] * s)
        params = ClassParams(r=r, s=s, c1=constants.c1)
        scale = r * math.sqrt(s)
        reports = [
            tail_bound_check(X, params, t, ell, C=constants.tail_C, c=constants.tail_c)
            for t in (0.0, scale, 2.0 * scale)
        ]
        return VerificationReport(
            target="tail-bound",
            passed=all(rep.passed for rep in reports),
            measured={f"t={rep.t:g}": rep.measured for rep in reports},
            bound={f"t={rep.t:g}": rep.bound for rep in reports},
            details={"s": s, "r": r, "ell": ell, "C": constants.tail_C, "c": constants.tail_c},
        )

    @staticmethod
    def tilt_ratio(
        s: int,
        r: int,
        ell: float,
        m: float,
        lam: float,
        constants: FittedConstants,
        identical_intervals: bool = False,
    ) -> VerificationReport:
        X = convolve_many([uniform_lattice(r)] * s)
        params = ClassParams(r=r, s=s, c1=constants.c1)
        I1 = HalfOpenInterval(lo=-ell, hi=0.0)
        I2 = I1 if identical_intervals else HalfOpenInterval(lo=0.0, hi=ell)
        report = tilt_ratio_check(
            X, params, I1, I2, m, lam,
            K=constants.tilt_K, C_prime=constants.tilt_C_prime, constant=constants.tilt_ratio_constant,
        )
        return VerificationReport(
            target="tilt-ratio",
            passed=report.passed,
            measured={"ratio": report.ratio, "deviation": report.deviation},
            bound={"deviation": report.bound},
            details={"s": s, "r": r, "ell": ell, "m": m, "lambda": lam,
                     "warnings": [w.model_dump() for w in report.warnings]},
        )

    @staticmethod
    def semi_local(
        n: int,
        seed: int,
        constants: FittedConstants,
        iterations: int = 30,
        density: DensityEstimate | None = None,
    ) -> VerificationReport:
        d = density or estimate_density_fixed_point(iterations=iterations, seed=seed)
        C_used = constants.semi_local_C
        report = semi_local_check(n, d, C_used)
        statement = check_statement_S(exact_pmf(n), n, report.m, d)
        bounds = density_bounds_check(
            d,
            sup_limit=constants.density_sup_limit,
            slope_limit=constants.density_slope_limit,
            padding=constants.bound_padding,
        )
        ceiling = pilot_ceiling(constants.pilot_semi_local, n, constants.regression_slack)
        bound = {"gamma": constants.gamma_target, "delta_n": report.delta_n}
        if ceiling is not None:
            bound["sup_deviation"] = ceiling
        return VerificationReport(
            target="semi-local",
            passed=statement.measured_gamma <= constants.gamma_target
            and bounds.passed
            and (ceiling is None or report.sup_deviation <= ceiling),
            measured={
                "sup_deviation": report.sup_deviation,
                "measured_gamma": statement.measured_gamma,
                "measured_eps": statement.measured_eps,
            },
            bound=bound,
            details={
                "semi_local": report.model_dump(mode="json"),
                "density_bounds": bounds.model_dump(),
                "pilot_sup_deviation": constants.pilot_semi_local.get(str(n)),
            },
        )


def llt_rows(ns: Sequence[int], d: DensityEstimate, cutoff: int) -> List[LltRow]:
    return [LltRow(n=n, sup_deviation=llt_deviation(n, d), included=n >= cutoff) for n in ns]


def non_increasing_within(values: Sequence[float], slack: float) -> bool:
    return all(later <= earlier * slack for earlier, later in zip(values, values[1:]))


def pilot_ceiling(pilots: Dict[str, float], n: int, slack: float) -> float | None:
    """Committed pilot value for n times the slack, or None when n was not piloted."""
    value = pilots.get(str(n))
    return None if value is None else value * slack


def pilot_regressions(rows: Sequence[LltRow], pilots: Dict[str, float], slack: float) -> List[int]:
    """Sizes whose deviation rose above their pilot ceiling."""
    regressed = []
    for row in rows:
        ceiling = pilot_ceiling(pilots, row.n, slack)
        if ceiling is not None and row.sup_deviation > ceiling:
            logger.info("LLT deviation %.4g at n=%d exceeds pilot ceiling %.4g", row.sup_deviation, row.n, ceiling)
            regressed.append(row.n)
    return regressed
