from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.signal import fftconvolve
from scipy.special import xlogy
from scipy.stats import norm

from qsmooth.config import get_settings
from qsmooth.errors import ArgumentError, CoverageError, NumericError
from qsmooth.pmf_core import LatticePmf, interval_probs
from qsmooth.quicksort_dist import exact_pmf, mean_recurrence, sample_qn_batch
from qsmooth.schemas import (
    DensityBoundsReport,
    DensityMeta,
    DensityMethod,
    GridSpec,
    HalfOpenInterval,
    SemiLocalReport,
)
from qsmooth.seeding import derive_rng

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 0.01
DIVERGENCE_TOL = 0.05
OUTSIDE_MASS_TOL = 1e-4


@dataclass(frozen=True)
class DensityEstimate:
    grid: np.ndarray
    values: np.ndarray
    method: DensityMethod
    meta: DensityMeta

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if grid.shape != values.shape or grid.size < 2:
            raise ArgumentError("Density grid and values must be matching vectors.")
        if np.any(values < -1e-12):
            raise NumericError(f"Density estimate has negative values (min {values.min():.3g}).")
        values = np.clip(values, 0.0, None)
        total = float(trapezoid(values, grid))
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise NumericError(f"Density estimate integrates to {total:.4f}, not 1.")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def __call__(self, x) -> np.ndarray:
        return np.interp(np.asarray(x, dtype=np.float64), self.grid, self.values, left=0.0, right=0.0)

    def integral(self) -> float:
        return float(trapezoid(self.values, self.grid))

    def cdf(self, x) -> np.ndarray:
        cum = cumulative_trapezoid(self.values, self.grid, initial=0.0)
        return np.interp(np.asarray(x, dtype=np.float64), self.grid, cum, left=0.0, right=cum[-1])

    def covers(self, lo: float, hi: float) -> bool:
        return self.grid[0] <= lo and hi <= self.grid[-1]

    def smoothed(self, bandwidth: float) -> "DensityEstimate":
        meta = self.meta.model_copy(update={"bandwidth": bandwidth})
        return DensityEstimate(
            self.grid, _gaussian_smooth(self.values, self.step, bandwidth), self.method, meta
        )


def _gaussian_smooth(values: np.ndarray, step: float, bandwidth: float) -> np.ndarray:
    if bandwidth <= 0:
        return values.copy()
    half = max(1, int(math.ceil(5.0 * bandwidth / step)))
    kernel = norm.pdf(np.arange(-half, half + 1) * step, scale=bandwidth)
    kernel /= kernel.sum()
    out = fftconvolve(values, kernel, mode="same")
    return np.clip(out, 0.0, None)


def _linear_bin(positions: np.ndarray, weights: np.ndarray, size: int) -> np.ndarray:
    """Split each weight between the two grid cells around its fractional index."""
    base = np.floor(positions)
    frac = positions - base
    base = base.astype(np.int64)
    out = np.zeros(size + 1, dtype=np.float64)
    keep = (base >= 0) & (base < size)
    np.add.at(out, base[keep], weights[keep] * (1.0 - frac[keep]))
    np.add.at(out, base[keep] + 1, weights[keep] * frac[keep])
    out[size - 1] += out[size]
    return out[:size]


def _extend_grid(grid: GridSpec, lo: float, hi: float, margin: float) -> GridSpec:
    step = grid.step
    new_lo = min(grid.lo, math.floor((lo - margin) / step) * step)
    new_hi = max(grid.hi, math.ceil((hi + margin) / step) * step)
    return GridSpec(lo=new_lo, hi=new_hi, step=step)


def estimate_density_mc(
    n: int,
    samples: int,
    bandwidth: float,
    grid: GridSpec | None = None,
    seed: int = 0,
    *,
    threads: int | None = None,
) -> DensityEstimate:
    if bandwidth <= 0:
        raise ArgumentError(f"KDE bandwidth must be positive, got {bandwidth}.")
    if n < 1000 or samples < 10_000:
        raise ArgumentError(f"Monte Carlo density needs n >= 1e3 and samples >= 1e4, got {n}, {samples}.")
    grid = grid or GridSpec()
    q_n = mean_recurrence(n)[n]
    x = (sample_qn_batch(n, samples, seed, threads=threads) - q_n) / n

    extended = False
    outside = np.count_nonzero((x < grid.lo) | (x > grid.hi)) / samples
    if outside > OUTSIDE_MASS_TOL:
        grid = _extend_grid(grid, float(x.min()), float(x.max()), 5.0 * bandwidth)
        extended = True
        logger.info("Extended KDE grid to [%g, %g]; %.2e of the mass was outside", grid.lo, grid.hi, outside)

    counts = _linear_bin((x - grid.lo) / grid.step, np.ones_like(x), grid.size)
    values = _gaussian_smooth(counts / (samples * grid.step), grid.step, bandwidth)
    meta = DensityMeta(n=n, samples=samples, bandwidth=bandwidth, seed=seed, grid_extended=extended)
    return DensityEstimate(grid.points(), values, DensityMethod.MC_KDE, meta)


def toll(u: np.ndarray) -> np.ndarray:
    """C(u) = 1 + 2u ln u + 2(1-u) ln(1-u)."""
    u = np.asarray(u, dtype=np.float64)
    return 1.0 + 2.0 * xlogy(u, u) + 2.0 * xlogy(1.0 - u, 1.0 - u)


def _scaled(mass: np.ndarray, points: np.ndarray, factor: float, grid: GridSpec) -> np.ndarray:
    support = np.flatnonzero(mass)
    positions = (factor * points[support] - grid.lo) / grid.step
    return _linear_bin(positions, mass[support], grid.size)


def _fixed_point_step(
    mass: np.ndarray, grid: GridSpec, nodes: np.ndarray, weights: np.ndarray, tolls: np.ndarray
) -> np.ndarray:
    points = grid.points()
    origin = grid.origin_index
    out = np.zeros(grid.size, dtype=np.float64)
    for u, w, c in zip(nodes, weights, tolls):
        left = _scaled(mass, points, u, grid)
        right = _scaled(mass, points, 1.0 - u, grid)
        summed = fftconvolve(left, right)
        summed[summed < 0] = 0.0
        # index t of the sum sits at 2 lo + t step, i.e. grid index t - origin
        positions = np.arange(summed.size, dtype=np.float64) - origin + c / grid.step
        out += w * _linear_bin(positions, summed, grid.size)
    return out


def quadrature_nodes(nodes: int, kind: str = "gauss", rng: np.random.Generator | None = None):
    """Nodes and weights on (0, 1) for averaging over U.

    "gauss" is Gauss-Legendre and deterministic. "jittered" draws one point
    per stratum from `rng` with equal weights.
    """
    if nodes < 1:
        raise ArgumentError("Need at least one quadrature node.")
    if kind == "gauss":
        x, w = np.polynomial.legendre.leggauss(nodes)
        return (x + 1.0) / 2.0, w / 2.0
    if kind == "jittered":
        if rng is None:
            raise ArgumentError("Jittered nodes need a random generator.")
        return (np.arange(nodes) + rng.random(nodes)) / nodes, np.full(nodes, 1.0 / nodes)
    raise ArgumentError(f"Unknown quadrature {kind!r}.")


def estimate_density_fixed_point(
    grid: GridSpec | None = None,
    iterations: int = 30,
    seed: int = 0,
    *,
    nodes: int = 128,
    bandwidth: float = 0.02,
    quadrature: str = "gauss",
) -> DensityEstimate:
    """Iterate law(Z) -> law(U Z + (1-U) Z' + C(U)) from a point mass at 0.

    The map squares any mass lost at the grid edges, so the iterate is
    renormalised after every step and only a single-step loss above
    DIVERGENCE_TOL is an error. Tolls are centred under the quadrature
    weights so the zero mean is kept exactly. `seed` only matters for
    quadrature="jittered".
    """
    if iterations < 1:
        raise ArgumentError(f"Fixed-point iteration needs iterations >= 1, got {iterations}.")
    grid = grid or GridSpec()
    if not grid.lo < 0 < grid.hi:
        raise ArgumentError("Fixed-point grid must contain 0.")
    rng = derive_rng(seed)
    u, w = quadrature_nodes(nodes, quadrature, rng)
    mass = np.zeros(grid.size, dtype=np.float64)
    mass[grid.origin_index] = 1.0
    for it in range(iterations):
        if quadrature == "jittered" and it:
            u, w = quadrature_nodes(nodes, quadrature, rng)
        tolls = toll(u)
        tolls -= np.dot(w, tolls)
        mass = _fixed_point_step(mass, grid, u, w, tolls)
        total = float(mass.sum())
        if not total > 0 or abs(1.0 - total) > DIVERGENCE_TOL:
            raise NumericError(f"Fixed-point iteration {it + 1} lost {1.0 - total:.3g} of its mass.")
        mass /= total
        logger.debug("Fixed-point iteration %d: step mass %.12f", it + 1, total)
    values = _gaussian_smooth(mass / grid.step, grid.step, bandwidth)
    meta = DensityMeta(iterations=iterations, nodes=nodes, bandwidth=bandwidth, seed=seed)
    return DensityEstimate(grid.points(), values, DensityMethod.FIXED_POINT, meta)


def density_from_pmf(
    pmf: LatticePmf,
    n: int,
    grid: GridSpec | None = None,
    bandwidth: float = 0.02,
    *,
    kernel: str = "gaussian",
) -> DensityEstimate:
    """Smoothed histogram of (Q_n - q_n)/n.

    kernel="box" averages the exact law over windows of width `bandwidth`
    centred at each grid point, so f(x) * bandwidth is the probability of the
    matching half-open window.
    """
    grid = grid or GridSpec()
    q_n = mean_recurrence(n)[n]
    x = grid.points()
    if kernel == "box":
        if bandwidth <= 0:
            raise ArgumentError("Box width must be positive.")
        lo = q_n + n * (x - bandwidth / 2.0)
        hi = q_n + n * (x + bandwidth / 2.0)
        values = interval_probs(pmf, lo, hi) / bandwidth
    elif kernel == "gaussian":
        positions = ((pmf.points - q_n) / n - grid.lo) / grid.step
        values = _gaussian_smooth(_linear_bin(positions, pmf.probs, grid.size) / grid.step, grid.step, bandwidth)
    else:
        raise ArgumentError(f"Unknown kernel {kernel!r}.")
    meta = DensityMeta(n=n, bandwidth=bandwidth)
    return DensityEstimate(x, values, DensityMethod.EXACT_KDE, meta)


def _default_stride(m: float) -> int:
    return max(1, math.ceil(m / 64.0))


def scan_intervals(pmf: LatticePmf, m: float, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Starts a of half-open intervals (a, a+m] sweeping the support, and their probabilities."""
    first = pmf.support_min - 1 - math.ceil(m)
    starts = np.arange(first, pmf.support_max + 1, stride, dtype=np.float64)
    starts = np.union1d(starts, [pmf.support_min - 1.0])
    return starts, interval_probs(pmf, starts, starts + m)


def _check_coverage(d: DensityEstimate, x: np.ndarray, probs: np.ndarray) -> None:
    needed = probs > get_settings().coverage_tol
    if not needed.any():
        return
    lo, hi = float(x[needed].min()), float(x[needed].max())
    if not d.covers(lo, hi):
        raise CoverageError(
            f"Density grid [{d.grid[0]:g}, {d.grid[-1]:g}] does not cover [{lo:g}, {hi:g}]."
        )


def semi_local_check(
    n: int,
    d: DensityEstimate,
    C_used: float = 1.0,
    *,
    stride: int | None = None,
) -> SemiLocalReport:
    pmf = exact_pmf(n)
    q_n = mean_recurrence(n)[n]
    m = 2.0 * C_used * n ** (5.0 / 6.0)
    stride = stride or _default_stride(m)
    starts, probs = scan_intervals(pmf, m, stride)
    x_mid = (starts + m / 2.0 - q_n) / n
    _check_coverage(d, x_mid, probs)
    deviation = np.abs(probs - (m / n) * d(x_mid)) * (n / m)
    worst = int(np.argmax(deviation))
    return SemiLocalReport(
        n=n,
        delta_n=2.0 * C_used * n ** (-1.0 / 6.0),
        sup_deviation=float(deviation[worst]),
        C_used=C_used,
        m=m,
        stride=stride,
        worst_interval=HalfOpenInterval(lo=float(starts[worst]), hi=float(starts[worst] + m)),
    )


def density_bounds_check(
    d: DensityEstimate,
    *,
    sup_limit: float = 16.0,
    slope_limit: float = 2466.0,
    padding: float = 0.05,
) -> DensityBoundsReport:
    sup_value = float(d.values.max())
    max_slope = float(np.max(np.abs(np.diff(d.values) / np.diff(d.grid))))
    sup_allowed = sup_limit * (1.0 + padding)
    slope_allowed = slope_limit * (1.0 + padding)
    violations = []
    if sup_value > sup_allowed:
        violations.append(f"sup: {sup_value:.4g} > {sup_allowed:.4g}")
    if max_slope > slope_allowed:
        violations.append(f"slope: {max_slope:.4g} > {slope_allowed:.4g}")
    return DensityBoundsReport(
        sup_value=sup_value,
        max_slope=max_slope,
        sup_limit=sup_allowed,
        slope_limit=slope_allowed,
        passed=not violations,
        violations=violations,
    )


def kolmogorov_distance(n: int, d: DensityEstimate) -> float:
    """sup_x |P(Q_n* <= x) - F_hat(x)|, checked on both sides of every atom."""
    pmf = exact_pmf(n)
    q_n = mean_recurrence(n)[n]
    x = (pmf.points - q_n) / n
    after = np.cumsum(pmf.probs)
    before = after - pmf.probs
    fitted = d.cdf(x)
    return float(max(np.max(np.abs(after - fitted)), np.max(np.abs(before - fitted))))


def llt_deviation(n: int, d: DensityEstimate, pmf: LatticePmf | None = None) -> float:
    """sup over lattice x of |n P(Q_n = x) - f_hat((x - q_n)/n)|."""
    pmf = pmf if pmf is not None else exact_pmf(n)
    q_n = mean_recurrence(n)[n]
    x = (pmf.points - q_n) / n
    return float(np.max(np.abs(n * pmf.probs - d(x))))


def modulus_of_continuity(d: DensityEstimate, radius: float) -> float:
    """max |f(x) - f(y)| over grid points with |x - y| <= radius."""
    width = min(d.values.size, int(math.floor(radius / d.step + 1e-9)) + 1)
    if width <= 1:
        return 0.0
    windows = np.lib.stride_tricks.sliding_window_view(d.values, width)
    return float(np.max(windows.max(axis=1) - windows.min(axis=1)))
