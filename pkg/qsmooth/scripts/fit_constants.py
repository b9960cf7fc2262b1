from __future__ import annotations

import logging
import math

import click

from qsmooth.config import load_constants
from qsmooth.limit_density import estimate_density_fixed_point, llt_deviation, semi_local_check
from qsmooth.pmf_core import convolve_many
from qsmooth.quicksort_dist import estimate_c1
from qsmooth.schemas import ClassParams, FittedConstants, HalfOpenInterval
from qsmooth.serialization import dump_json
from qsmooth.smoothing import tail_bound_check, tilt_ratio_check
from qsmooth.verification import uniform_lattice

logger = logging.getLogger(__name__)

SAFETY = 1.5
PILOT_NS = (64, 128, 256)
TAIL_FAMILIES = [(100, 5), (400, 5), (400, 10)]
TILT_FAMILIES = [(400, 10, 200.0, 400.0, 2.0), (1600, 5, 100.0, 200.0, 2.0)]


def _round_down(value: float, digits: int = 2) -> float:
    if value <= 0:
        return 0.0
    scale = 10 ** (digits - 1 - math.floor(math.log10(value)))
    return math.floor(value * scale) / scale


def fit_tail_constant(c: float) -> float:
    worst = 0.0
    for s, r in TAIL_FAMILIES:
        X = convolve_many([uniform_lattice(r)] * s)
        params = ClassParams(r=r, s=s, c1=0.5)
        for t in (0.0, r * math.sqrt(s), 2 * r * math.sqrt(s)):
            rep = tail_bound_check(X, params, t, float(r), C=1.0, c=c)
            worst = max(worst, rep.measured / rep.bound)
    return worst


def fit_tilt_constant() -> float:
    worst = 0.0
    for s, r, ell, m, lam in TILT_FAMILIES:
        X = convolve_many([uniform_lattice(r)] * s)
        params = ClassParams(r=r, s=s, c1=0.5)
        rep = tilt_ratio_check(
            X, params, HalfOpenInterval(lo=-ell, hi=0.0), HalfOpenInterval(lo=0.0, hi=ell), m, lam,
            constant=1.0,
        )
        worst = max(worst, rep.deviation / (rep.r_over_ell + rep.lambda_m_term))
    return worst


def fit(seed: int, iterations: int) -> FittedConstants:
    base = load_constants()
    c1 = _round_down(0.5 * estimate_c1(range(128, 257, 16)))
    d = estimate_density_fixed_point(iterations=iterations, seed=seed)
    pilot_semi_local = {str(n): semi_local_check(n, d, base.semi_local_C).sup_deviation for n in PILOT_NS}
    pilot_llt = {str(n): llt_deviation(n, d) for n in PILOT_NS}
    return base.model_copy(
        update={
            "c1": c1 or base.c1,
            "tail_C": max(base.tail_C, SAFETY * fit_tail_constant(base.tail_c)),
            "tilt_ratio_constant": max(base.tilt_ratio_constant, SAFETY * fit_tilt_constant()),
            "pilot_semi_local": pilot_semi_local,
            "pilot_llt": pilot_llt,
        }
    )


@click.command()
@click.option("--seed", type=int, required=True)
@click.option("--iterations", type=int, default=30)
@click.option("--output", type=click.Path(dir_okay=False), required=True)
def main(seed: int, iterations: int, output: str) -> None:
    """Pilot-fit the implicit constants and write them as versioned JSON."""
    logging.basicConfig(level=logging.INFO)
    try:
        constants = fit(seed, iterations)
    except Exception:
        logger.exception("Constant fit failed")
        raise
    with open(output, "w", encoding="utf-8") as handle:
        handle.write(dump_json(constants))
    click.echo(f"Wrote fitted constants to {output}")


if __name__ == "__main__":
    main()
