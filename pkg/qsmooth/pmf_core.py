"""Finite-support probability mass functions on the integer lattice.

Every law in the lab (Q_n, truncated parts, smooth parts) is carried as a
`LatticePmf`: an integer offset plus a dense vector of weights. Operations are
pure and return new objects; mass drift beyond the configured tolerance raises
instead of being renormalised away.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.signal import fftconvolve
from scipy.special import logsumexp

from qsmooth.config import get_settings
from qsmooth.errors import (
    ArgumentError,
    ClassMembershipError,
    ConstructionError,
    InfeasibleError,
    MassDriftError,
    NumericError,
    RangeError,
    SizeError,
)
from qsmooth.schemas import ClassCheck, ClassParams

logger = logging.getLogger(__name__)

_MAX_LOG = 709.0
_MAX_BRACKET_DOUBLINGS = 64


@dataclass(frozen=True)
class LatticePmf:
    offset: int
    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise ConstructionError("A lattice pmf needs a non-empty 1-d weight vector.")
        if not np.all(np.isfinite(probs)):
            raise ConstructionError("Lattice pmf weights must be finite.")
        if np.any(probs < 0):
            raise ConstructionError("Lattice pmf weights must be non-negative.")
        if probs[0] <= 0 or probs[-1] <= 0:
            raise ConstructionError("Lattice pmf support must be tight (positive end weights).")
        total = math.fsum(probs)
        if abs(total - 1.0) > get_settings().mass_tol:
            raise MassDriftError(f"Lattice pmf mass {total!r} drifted from 1.")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "offset", int(self.offset))

    @property
    def size(self) -> int:
        return int(self.probs.size)

    @property
    def support_min(self) -> int:
        return self.offset

    @property
    def support_max(self) -> int:
        return self.offset + self.size - 1

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.size, dtype=np.float64)

    @cached_property
    def _cumulative(self) -> np.ndarray:
        cum = np.empty(self.size + 1, dtype=np.float64)
        cum[0] = 0.0
        np.cumsum(self.probs, out=cum[1:])
        return cum

    def pmf_at(self, x) -> np.ndarray:
        idx = np.asarray(x, dtype=np.int64) - self.offset
        inside = (idx >= 0) & (idx < self.size)
        out = np.zeros(idx.shape, dtype=np.float64)
        out[inside] = self.probs[idx[inside]]
        return out

    def cdf(self, x) -> np.ndarray:
        """P(X <= x), vectorised over real x."""
        idx = np.floor(np.asarray(x, dtype=np.float64)) - self.offset + 1
        idx = np.clip(idx, 0, self.size).astype(np.int64)
        return self._cumulative[idx]

    def shifted(self, by: int) -> "LatticePmf":
        return LatticePmf(self.offset + int(by), self.probs)


def _tight(offset: int, probs: np.ndarray) -> LatticePmf:
    nz = np.flatnonzero(probs > 0)
    if nz.size == 0:
        raise ConstructionError("Distribution has no positive mass.")
    return LatticePmf(offset + int(nz[0]), probs[nz[0] : nz[-1] + 1])


def delta(point: int) -> LatticePmf:
    return LatticePmf(int(point), np.ones(1))


def from_point_masses(entries: Iterable[tuple[int, float]]) -> LatticePmf:
    entries = list(entries)
    if not entries:
        raise ConstructionError("Cannot build a pmf from no entries.")
    points = []
    weights = []
    for point, weight in entries:
        if float(point) != math.floor(float(point)):
            raise ConstructionError(f"Support point {point!r} is not an integer.")
        if weight < 0:
            raise ConstructionError(f"Negative weight {weight!r} at point {point}.")
        points.append(int(point))
        weights.append(float(weight))
    total = math.fsum(weights)
    if not total > 0:
        raise ConstructionError("All weights are zero.")
    lo = min(points)
    dense = np.zeros(max(points) - lo + 1, dtype=np.float64)
    np.add.at(dense, np.asarray(points) - lo, np.asarray(weights) / total)
    return _tight(lo, dense)


def _convolve_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    settings = get_settings()
    length = a.size + b.size - 1
    if length > settings.max_support_points:
        raise SizeError(
            f"Convolution support of {length} points exceeds cap {settings.max_support_points}."
        )
    if a.size + b.size <= settings.fft_threshold:
        return np.convolve(a, b)
    out = fftconvolve(a, b)
    floor = settings.fft_noise_floor * float(out.max())
    out[out < floor] = 0.0
    return out


def convolve(p: LatticePmf, q: LatticePmf) -> LatticePmf:
    if p.size == 1:
        return q.shifted(p.offset)
    if q.size == 1:
        return p.shifted(q.offset)
    return _tight(p.offset + q.offset, _convolve_arrays(p.probs, q.probs))


def convolve_many(pmfs: Sequence[LatticePmf]) -> LatticePmf:
    """Pairwise tree reduction in a fixed order."""
    if not pmfs:
        raise ArgumentError("Nothing to convolve.")
    level = list(pmfs)
    while len(level) > 1:
        nxt = [convolve(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def moments(p: LatticePmf) -> tuple[float, float, float]:
    k = np.arange(p.size, dtype=np.float64)
    rel_mean = float(np.dot(k, p.probs))
    dev = k - rel_mean
    variance = max(float(np.dot(dev * dev, p.probs)), 0.0)
    abs_third = float(np.dot(np.abs(dev) ** 3, p.probs))
    return p.offset + rel_mean, variance, abs_third


def interval_prob(p: LatticePmf, a: float, b: float) -> float:
    """P(a < X <= b)."""
    if a > b:
        raise ArgumentError(f"Interval ({a}, {b}] has a > b.")
    return float(p.cdf(b) - p.cdf(a))


def interval_probs(p: LatticePmf, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return p.cdf(hi) - p.cdf(lo)


@dataclass(frozen=True)
class TiltResult:
    tilted: LatticePmf
    alpha: float
    gamma: float
    log_gamma: float


def _tilted_weights(p: LatticePmf, alpha: float) -> tuple[np.ndarray, float]:
    # exp(alpha (x - x0) - log gamma') with x0 the support midpoint
    k = np.arange(p.size, dtype=np.float64)
    mid = 0.5 * (p.size - 1)
    with np.errstate(divide="ignore"):
        logw = np.log(p.probs) + alpha * (k - mid)
    shift_lse = float(logsumexp(logw))
    weights = np.exp(logw - shift_lse)
    log_gamma = shift_lse + alpha * (p.offset + mid)
    return weights, log_gamma


def tilt(p: LatticePmf, alpha: float) -> TiltResult:
    if not math.isfinite(alpha):
        raise ArgumentError(f"Tilt parameter must be finite, got {alpha!r}.")
    if alpha == 0:
        return TiltResult(tilted=p, alpha=0.0, gamma=1.0, log_gamma=0.0)
    weights, log_gamma = _tilted_weights(p, alpha)
    if log_gamma > _MAX_LOG or log_gamma < -_MAX_LOG:
        raise RangeError(f"Normaliser exp({log_gamma:.3g}) is not representable.")
    if weights[0] <= 0 or weights[-1] <= 0:
        raise RangeError(f"Tilt by {alpha!r} underflows an end of the support.")
    weights = weights / math.fsum(weights)
    return TiltResult(
        tilted=LatticePmf(p.offset, weights),
        alpha=float(alpha),
        gamma=math.exp(log_gamma),
        log_gamma=log_gamma,
    )


def _tilted_mean(p: LatticePmf, alpha: float) -> float:
    weights, _ = _tilted_weights(p, alpha)
    k = np.arange(p.size, dtype=np.float64)
    return p.offset + float(np.dot(k, weights)) / math.fsum(weights)


def solve_tilt(p: LatticePmf, target_mean: float, tol: float = 1e-10) -> float:
    if p.size == 1:
        if target_mean == p.offset:
            return 0.0
        raise InfeasibleError(f"Point mass at {p.offset} cannot be tilted to mean {target_mean}.")
    if not p.support_min < target_mean < p.support_max:
        raise InfeasibleError(
            f"Target mean {target_mean} is outside the open hull ({p.support_min}, {p.support_max})."
        )

    def excess(alpha: float) -> float:
        return _tilted_mean(p, alpha) - target_mean

    if abs(excess(0.0)) <= tol:
        return 0.0

    lo, hi = -1.0, 1.0
    for _ in range(_MAX_BRACKET_DOUBLINGS):
        if excess(hi) >= 0:
            break
        lo, hi = hi, 2.0 * hi
    for _ in range(_MAX_BRACKET_DOUBLINGS):
        if excess(lo) <= 0:
            break
        lo, hi = 2.0 * lo, lo
    if excess(lo) > 0 or excess(hi) < 0:
        raise InfeasibleError(f"Could not bracket a tilt for mean {target_mean}.")
    logger.debug("Tilt bracket for target %s: [%s, %s]", target_mean, lo, hi)

    span = float(p.size - 1)
    alpha = brentq(excess, lo, hi, xtol=min(1e-14, tol / (span * span)), maxiter=500)
    if abs(excess(alpha)) > tol:
        raise NumericError(
            f"Tilt root {alpha!r} misses target mean {target_mean} by {abs(excess(alpha))!r}."
        )
    return float(alpha)


def is_in_class_Dr(p: LatticePmf, params: ClassParams, center: float = 0.0) -> ClassCheck:
    """Membership of X - center in D_r: mean zero, |X| <= 4r, Var X >= c1 (r/2)^2."""
    mean, variance, _ = moments(p)
    mean -= center
    lo = p.support_min - center
    hi = p.support_max - center
    violations: list[str] = []
    if abs(mean) > get_settings().class_mean_tol:
        violations.append(f"mean: |E X| = {abs(mean):.3g} is not zero")
    if lo < -4 * params.r or hi > 4 * params.r:
        violations.append(f"support: [{lo:g}, {hi:g}] leaves [-{4 * params.r:g}, {4 * params.r:g}]")
    floor = params.c1 * (params.r / 2.0) ** 2
    if variance < floor:
        violations.append(f"variance: {variance:.6g} < c1 (r/2)^2 = {floor:.6g}")
    return ClassCheck(
        passed=not violations,
        mean=mean,
        variance=variance,
        support_min=lo,
        support_max=hi,
        violations=violations,
    )


def build_Brs(
    components: Sequence[LatticePmf],
    params: ClassParams,
    centers: Sequence[float] | None = None,
) -> LatticePmf:
    if len(components) != params.s:
        raise ArgumentError(f"Expected {params.s} components, got {len(components)}.")
    centers = list(centers) if centers is not None else [0.0] * len(components)
    for index, (component, center) in enumerate(zip(components, centers)):
        check = is_in_class_Dr(component, params, center=center)
        if not check.passed:
            raise ClassMembershipError(
                f"Component {index} is not in D_r: {'; '.join(check.violations)}"
            )
    return convolve_many(components)
