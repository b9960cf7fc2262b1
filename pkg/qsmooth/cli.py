"""Command-line entry point: python -m qsmooth <command>.

Exit codes: 0 when every check passes, 1 when a check fails, 2 for usage or
configuration errors.
"""

from __future__ import annotations

import functools
import io
import logging
import sys
from typing import Optional

import click
import numpy as np
from pydantic import ValidationError

from qsmooth.config import get_settings, load_constants
from qsmooth.errors import LabError
from qsmooth.execution_tree import (
    ENSEMBLE_HEADER,
    count_medium_sublists,
    ensemble_row,
    run_phase1,
    sample_binomial_decomposition,
    sample_decomposition,
    sample_truncated_decomposition,
)
from qsmooth.limit_density import (
    density_bounds_check,
    estimate_density_fixed_point,
    estimate_density_mc,
    llt_deviation,
)
from qsmooth.pmf_core import from_point_masses, moments
from qsmooth.quicksort_dist import (
    brute_force_pmf,
    exact_pmf,
    mean_recurrence,
    qn_table,
    sample_qn_batch,
)
from qsmooth.schemas import SCHEMA_VERSION, Command, GridSpec, LltRow, RunConfig
from qsmooth.seeding import ordered_map, split_seed
from qsmooth.serialization import (
    density_meta_dict,
    dump_json,
    pmf_to_dict,
    qn_table_to_dict,
    write_density_csv,
    write_pmf_csv,
    write_qn_table_csv,
    write_rows_csv,
)
from qsmooth.smoothing import schedule as build_schedule
from qsmooth.smoothing import soft_schedule
from qsmooth.verification import VerificationService, llt_rows, non_increasing_within, pilot_regressions

logger = logging.getLogger(__name__)

VERIFY_TARGETS = [
    "medium-count-tail",
    "plain-split",
    "truncated-split",
    "binomial-split",
    "normal-approx",
    "tail-bound",
    "tilt-ratio",
    "semi-local",
]

# names the verify targets also answer to
VERIFY_ALIASES = {
    "lemma23": "medium-count-tail",
    "cor24": "plain-split",
    "lemma27": "truncated-split",
    "lemma42": "binomial-split",
    "lemma31": "normal-approx",
    "lemma32": "tail-bound",
    "lemma33": "tilt-ratio",
    "thm51-window": "semi-local",
}


def _lab_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except LabError as exc:
            raise click.UsageError(str(exc)) from exc
        except ValidationError as exc:
            messages = "; ".join(err["msg"] for err in exc.errors())
            raise click.UsageError(messages) from exc

    return wrapper


def _config(ctx: click.Context, command: Command, **fields) -> RunConfig:
    return RunConfig(command=command, threads=ctx.obj["threads"], constants_file=ctx.obj["constants_file"], **fields)


def _constants(ctx: click.Context):
    try:
        return load_constants(ctx.obj["constants_file"])
    except (OSError, ValueError) as exc:
        raise click.UsageError(f"Could not load constants: {exc}") from exc


def _emit(text: str, output: Optional[str]) -> None:
    if output:
        with open(output, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
    else:
        click.echo(text, nl=False)


def _csv_text(writer, *args, **kwargs) -> str:
    buffer = io.StringIO(newline="")
    writer(*args, buffer, **kwargs)
    return buffer.getvalue()


@click.group()
@click.option("--threads", type=int, default=None, help="Worker cap; results do not depend on it.")
@click.option("--constants", "constants_file", type=click.Path(dir_okay=False), default=None,
              help="Fitted-constants JSON (defaults to the packaged file).")
@click.pass_context
def cli(ctx: click.Context, threads: Optional[int], constants_file: Optional[str]) -> None:
    settings = get_settings()
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    ctx.ensure_object(dict)
    ctx.obj["threads"] = threads or settings.threads
    ctx.obj["constants_file"] = constants_file


@cli.command()
@click.option("--n", "n", type=int, required=True)
@click.option("--oracle", is_flag=True, help="Also enumerate all n! orderings and compare.")
@click.option("--table", is_flag=True, help="Write the summary table for 0..n instead of one pmf.")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv")
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@click.pass_context
@_lab_errors
def exact(ctx, n, oracle, table, fmt, output):
    """Exact law of Q_n."""
    _config(ctx, Command.EXACT, n=n, format=fmt, output=output)
    if table:
        qtab = qn_table(n)
        text = _csv_text(write_qn_table_csv, qtab) if fmt == "csv" else dump_json(qn_table_to_dict(qtab))
        _emit(text, output)
    else:
        pmf = exact_pmf(n)
        if fmt == "csv":
            _emit(_csv_text(write_pmf_csv, pmf), output)
        else:
            _, variance, _ = moments(pmf)
            _emit(dump_json({
                "schema_version": SCHEMA_VERSION,
                "n": n,
                "q_n": mean_recurrence(n)[n],
                "variance": variance,
                "pmf": pmf_to_dict(pmf),
            }), output)
        _, variance, _ = moments(pmf)
        click.echo(
            f"n={n} q_n={mean_recurrence(n)[n]!r} variance={variance!r} "
            f"support=[{pmf.support_min}, {pmf.support_max}]",
            err=True,
        )

    if oracle:
        pmf = exact_pmf(n)
        brute = brute_force_pmf(n)
        lo = min(pmf.support_min, brute.support_min)
        hi = max(pmf.support_max, brute.support_max)
        points = np.arange(lo, hi + 1)
        diff = float(np.max(np.abs(pmf.pmf_at(points) - brute.pmf_at(points))))
        click.echo(f"oracle max pointwise difference: {diff!r}", err=True)
        if diff > 1e-12:
            ctx.exit(1)


@cli.command()
@click.option("--kind", type=click.Choice(["qn", "phase1", "plain", "truncated", "binomial"]), default="qn")
@click.option("--n", "n", type=int, required=True)
@click.option("--r", "r", type=int, default=20)
@click.option("--c", "c", type=float, default=None, help="Size-3 share for the binomial split.")
@click.option("--c2", "c2", type=float, default=None)
@click.option("--samples", type=int, default=1, help="Draws (qn) or ensemble seeds (other kinds).")
@click.option("--seed", type=int, default=None)
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@click.pass_context
@_lab_errors
def simulate(ctx, kind, n, r, c, c2, samples, seed, output):
    """Draw Q_n or decomposition ensembles."""
    config = _config(ctx, Command.SIMULATE, n=n, r=r, samples=samples, seed=seed, output=output, format="csv")
    threads = config.threads
    if kind == "qn":
        draws = sample_qn_batch(n, samples, seed, threads=threads)
        text = _csv_text(write_rows_csv, ["index", "comparisons"], enumerate(draws.tolist()), versioned=True)
        _emit(text, output)
        return

    constants = _constants(ctx)
    if kind == "phase1":
        def _one(s):
            res = run_phase1(n, r, s)
            medium = count_medium_sublists(res, r)
            return [s, n, r, res.active_steps, medium, "", res.comparisons_phase1, ""]
    else:
        def _sample(s):
            if kind == "plain":
                return sample_decomposition(n, r, s)
            if kind == "truncated":
                return sample_truncated_decomposition(n, r, constants.c1, c2 or constants.effective_c2, s, r0=constants.r0)
            return sample_binomial_decomposition(
                n, c or constants.binomial_c, s, n0=constants.binomial_n0, c_max=constants.binomial_c_max
            )

        def _one(s):
            return ensemble_row(s, _sample(s))

    rows = ordered_map(lambda i: _one(split_seed(seed, i)), range(samples), threads=threads)
    _emit(_csv_text(write_rows_csv, ENSEMBLE_HEADER, rows, versioned=True), output)


@cli.command()
@click.option("--method", type=click.Choice(["mc", "fixed-point"]), default="fixed-point")
@click.option("--n", "n", type=int, default=10_000, help="Size for the Monte Carlo estimate.")
@click.option("--samples", type=int, default=1_000_000)
@click.option("--bandwidth", type=float, default=0.02)
@click.option("--iterations", type=int, default=30)
@click.option("--grid-lo", type=float, default=-3.0)
@click.option("--grid-hi", type=float, default=5.0)
@click.option("--grid-step", type=float, default=0.005)
@click.option("--seed", type=int, default=None)
@click.option("--output", type=click.Path(dir_okay=False), default=None,
              help="CSV path; the metadata sidecar goes to <output>.json.")
@click.pass_context
@_lab_errors
def density(ctx, method, n, samples, bandwidth, iterations, grid_lo, grid_hi, grid_step, seed, output):
    """Estimate the limiting density of (Q_n - q_n)/n."""
    config = _config(ctx, Command.DENSITY, n=n, samples=samples, bandwidth=bandwidth, seed=seed, output=output, format="csv")
    grid = GridSpec(lo=grid_lo, hi=grid_hi, step=grid_step)
    if method == "mc":
        d = estimate_density_mc(n, samples, bandwidth, grid, seed, threads=config.threads)
    else:
        d = estimate_density_fixed_point(grid, iterations, seed, bandwidth=bandwidth)
    constants = _constants(ctx)
    bounds = density_bounds_check(
        d, sup_limit=constants.density_sup_limit, slope_limit=constants.density_slope_limit,
        padding=constants.bound_padding,
    )
    meta = density_meta_dict(d)
    meta["bounds"] = bounds.model_dump()
    _emit(_csv_text(write_density_csv, d), output)
    if output:
        _emit(dump_json(meta), f"{output}.json")
    else:
        click.echo(dump_json(meta), err=True, nl=False)
    if not bounds.passed:
        ctx.exit(1)


@cli.command()
@click.argument("target", type=click.Choice(VERIFY_TARGETS + list(VERIFY_ALIASES)))
@click.option("--n", "n", type=int, default=None)
@click.option("--r", "r", type=int, default=None)
@click.option("--s", "s", type=int, default=None)
@click.option("--ell", type=float, default=None)
@click.option("--m", "m", type=float, default=None)
@click.option("--lam", type=float, default=None)
@click.option("--c", "c", type=float, default=None)
@click.option("--c2", "c2", type=float, default=None)
@click.option("--seeds", type=int, default=1000)
@click.option("--iterations", type=int, default=30)
@click.option("--identical-intervals", is_flag=True)
@click.option("--seed", type=int, default=None)
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@click.pass_context
@_lab_errors
def verify(ctx, target, n, r, s, ell, m, lam, c, c2, seeds, iterations, identical_intervals, seed, output):
    """Check one quantitative ingredient against its bound."""
    target = VERIFY_ALIASES.get(target, target)
    config = _config(ctx, Command.VERIFY, target=target, n=n, r=r, seeds=seeds, seed=seed, output=output)
    constants = _constants(ctx)
    threads = config.threads
    if target == "medium-count-tail":
        report = VerificationService.medium_count_tail(n or 4000, r or 20, seeds, seed, threads)
    elif target == "plain-split":
        report = VerificationService.plain_split(n or 4000, r or 20, seeds, seed, threads)
    elif target == "truncated-split":
        report = VerificationService.truncated_split(n or 4000, r or 40, seeds, seed, constants, c2, threads)
    elif target == "binomial-split":
        report = VerificationService.binomial_split(n or 600, c or constants.binomial_c, seeds, seed, constants, threads)
    elif target == "normal-approx":
        report = VerificationService.normal_approx(s or 400, r or 1, constants)
    elif target == "tail-bound":
        r = r or 5
        report = VerificationService.tail_bound(s or 400, r, ell or float(r), constants)
    elif target == "tilt-ratio":
        report = VerificationService.tilt_ratio(
            s or 400, r or 10, ell or 200.0, m or 400.0, lam or 2.0, constants,
            identical_intervals=identical_intervals,
        )
    else:
        report = VerificationService.semi_local(n or 256, seed, constants, iterations=iterations)
    _emit(dump_json(report), output)
    if not report.passed:
        ctx.exit(1)


@cli.command()
@click.option("--n", "ns", type=int, multiple=True, help="Repeatable; defaults to 64, 128, 256.")
@click.option("--density", "source", type=click.Choice(["fixed-point", "mc"]), default="fixed-point")
@click.option("--iterations", type=int, default=30)
@click.option("--mc-n", type=int, default=10_000)
@click.option("--mc-samples", type=int, default=1_000_000)
@click.option("--bandwidth", type=float, default=0.02)
@click.option("--samples", type=int, default=None, help="Sample Q_n for n beyond the exact cap.")
@click.option("--schedule", "with_schedule", is_flag=True, help="Include the cascade parameters.")
@click.option("--seed", type=int, default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="json")
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@click.pass_context
@_lab_errors
def llt(ctx, ns, source, iterations, mc_n, mc_samples, bandwidth, samples, with_schedule, seed, fmt, output):
    """Local deviation sup_x |n P(Q_n = x) - f((x - q_n)/n)| across n."""
    config = _config(ctx, Command.LLT, seed=seed, samples=samples, bandwidth=bandwidth, format=fmt, output=output)
    constants = _constants(ctx)
    ns = sorted(ns) or [64, 128, 256]
    if source == "mc":
        d = estimate_density_mc(mc_n, mc_samples, bandwidth, None, seed, threads=config.threads)
    else:
        d = estimate_density_fixed_point(iterations=iterations, seed=seed, bandwidth=bandwidth)

    cap = get_settings().n_max
    exact_ns = [n for n in ns if n <= cap]
    rows = llt_rows(exact_ns, d, constants.small_n_cutoff)
    for n in (n for n in ns if n > cap):
        if not samples:
            raise click.UsageError(f"n={n} exceeds the exact cap {cap}; pass --samples to sample it.")
        draws = sample_qn_batch(n, samples, split_seed(seed, n), threads=config.threads)
        values, counts = np.unique(draws, return_counts=True)
        empirical = from_point_masses(zip(values.tolist(), counts.tolist()))
        rows.append(LltRow(n=n, sup_deviation=llt_deviation(n, d, empirical), included=True))
    included = [row.sup_deviation for row in rows if row.included]
    regressed = pilot_regressions(rows, constants.pilot_llt, constants.regression_slack)
    passed = non_increasing_within(included, constants.regression_slack) and not regressed

    if fmt == "csv":
        _emit(_csv_text(write_rows_csv, ["n", "sup_deviation", "included"],
                        [(row.n, row.sup_deviation, row.included) for row in rows], versioned=True), output)
    else:
        payload = {
            "schema_version": SCHEMA_VERSION,
            "density": d.method.value,
            "rows": [row.model_dump() for row in rows],
            "slack": constants.regression_slack,
            "pilot_regressions": regressed,
            "passed": passed,
        }
        if with_schedule:
            payload["schedule"] = build_schedule(
                max(ns), constants.schedule_C_start, constants.schedule_C_hat
            ).model_dump()
        _emit(dump_json(payload), output)
    if not passed:
        ctx.exit(1)


@cli.command()
@click.option("--n", "n", type=int, required=True)
@click.option("--c-start", type=float, default=None)
@click.option("--c-hat", type=float, default=None)
@click.option("--soft", is_flag=True, help="Use the squaring schedule omega -> omega^1.5.")
@click.option("--omega0", type=float, default=10.0)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="json")
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@click.pass_context
@_lab_errors
def schedule(ctx, n, c_start, c_hat, soft, omega0, fmt, output):
    """Per-round parameters of the smoothing cascade."""
    _config(ctx, Command.SCHEDULE, n=n, format=fmt, output=output)
    constants = _constants(ctx)
    if soft:
        rounds = soft_schedule(n, omega0)
        if fmt == "csv":
            header = list(type(rounds[0]).model_fields)
            rows = [[getattr(rd, key) for key in header] for rd in rounds]
            _emit(_csv_text(write_rows_csv, header, rows), output)
        else:
            _emit(dump_json([rd.model_dump() for rd in rounds]), output)
        return

    params = build_schedule(
        n,
        c_start if c_start is not None else constants.schedule_C_start,
        c_hat if c_hat is not None else constants.schedule_C_hat,
    )
    if fmt == "csv":
        header = list(type(params.rounds[0]).model_fields)
        rows = [[getattr(rd, key) for key in header] for rd in params.rounds]
        _emit(_csv_text(write_rows_csv, header, rows), output)
    else:
        _emit(dump_json(params), output)


def main() -> None:
    cli(obj={})


if __name__ == "__main__":
    main()
