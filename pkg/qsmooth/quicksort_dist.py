from __future__ import annotations

import logging
import math
import threading
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import permutations
from typing import Iterable, List

import numpy as np

from qsmooth.config import get_settings
from qsmooth.errors import ArgumentError, SizeError
from qsmooth.pmf_core import LatticePmf, _convolve_arrays, _tight, delta, from_point_masses, moments
from qsmooth.seeding import PivotStream, derive_rng, ordered_map

logger = logging.getLogger(__name__)

LEAF_CUTOFF = 64
BATCH_CHUNK = 2000


def mean_recurrence(n_max: int) -> List[float]:
    if n_max < 0:
        raise ArgumentError(f"n_max must be non-negative, got {n_max}.")
    means = [0.0] * (n_max + 1)
    running = 0.0
    for n in range(n_max + 1):
        if n >= 2:
            means[n] = (n - 1) + 2.0 * running / n
        running += means[n]
    return means


def mean_closed_form(n: int) -> float:
    """q_n = 2(n+1)H_n - 4n."""
    if n <= 0:
        return 0.0
    harmonic = math.fsum(1.0 / k for k in range(1, n + 1))
    return 2.0 * (n + 1) * harmonic - 4.0 * n


def variance_closed_form(n: int) -> float:
    if n <= 1:
        return 0.0
    h1 = math.fsum(1.0 / k for k in range(1, n + 1))
    h2 = math.fsum(1.0 / (k * k) for k in range(1, n + 1))
    return 7.0 * n * n - 4.0 * (n + 1) ** 2 * h2 - 2.0 * (n + 1) * h1 + 13.0 * n


@lru_cache(maxsize=None)
def min_comparisons(n: int) -> int:
    """Fewest comparisons any pivot sequence can use; the left end of the support of Q_n."""
    if n <= 1:
        return 0
    left = (n - 1) // 2
    return n - 1 + min_comparisons(left) + min_comparisons(n - 1 - left)


@dataclass
class QnTable:
    n_max: int
    pmfs: List[LatticePmf]
    means: List[float]

    def summary_rows(self) -> list[tuple[int, float, float, int, int]]:
        rows = []
        for n, pmf in enumerate(self.pmfs):
            _, variance, _ = moments(pmf)
            rows.append((n, self.means[n], variance, pmf.support_min, pmf.support_max))
        return rows


def _next_pmf(pmfs: List[LatticePmf], n: int, threads: int) -> LatticePmf:
    # pivot ranks j and n-1-j give the same pair of sublist laws
    pairs = [(j, n - 1 - j) for j in range((n - 1) // 2 + 1)]

    def _pair(pair: tuple[int, int]) -> tuple[int, np.ndarray, float]:
        j, k = pair
        conv = _convolve_arrays(pmfs[j].probs, pmfs[k].probs)
        return pmfs[j].offset + pmfs[k].offset, conv, 1.0 if j == k else 2.0

    pieces = ordered_map(_pair, pairs, threads=threads)
    lo = min(off for off, _, _ in pieces)
    hi = max(off + conv.size - 1 for off, conv, _ in pieces)
    acc = np.zeros(hi - lo + 1, dtype=np.float64)
    for off, conv, weight in pieces:
        acc[off - lo : off - lo + conv.size] += weight * conv
    acc /= n
    return _tight(lo + n - 1, acc)


class _QnCache:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._pmfs: List[LatticePmf] = [delta(0), delta(0)]

    def upto(self, n: int) -> List[LatticePmf]:
        with self._lock:
            if len(self._pmfs) <= n:
                threads = get_settings().threads
                logger.debug("Extending exact Q_n table from %d to %d", len(self._pmfs) - 1, n)
                for k in range(len(self._pmfs), n + 1):
                    self._pmfs.append(_next_pmf(self._pmfs, k, threads))
            return self._pmfs[: n + 1]

    def clear(self) -> None:
        with self._lock:
            self._pmfs = [delta(0), delta(0)]


_cache = _QnCache()


def _check_cap(n: int) -> None:
    if n < 0:
        raise ArgumentError(f"n must be non-negative, got {n}.")
    cap = get_settings().n_max
    if n > cap:
        raise SizeError(f"Exact law requested for n={n} beyond cap n_max={cap}.")


def exact_pmf(n: int) -> LatticePmf:
    _check_cap(n)
    return _cache.upto(max(n, 1))[n]


def qn_table(n_max: int) -> QnTable:
    _check_cap(n_max)
    pmfs = list(_cache.upto(max(n_max, 1))[: n_max + 1])
    return QnTable(n_max=n_max, pmfs=pmfs, means=mean_recurrence(n_max))


def _first_pivot_comparisons(keys: tuple[int, ...]) -> int:
    if len(keys) <= 1:
        return 0
    pivot = keys[0]
    left = tuple(k for k in keys[1:] if k < pivot)
    right = tuple(k for k in keys[1:] if k > pivot)
    return len(keys) - 1 + _first_pivot_comparisons(left) + _first_pivot_comparisons(right)


def brute_force_pmf(n: int) -> LatticePmf:
    """Law of Q_n by running first-element-pivot QuickSort on all n! orderings."""
    limit = get_settings().brute_force_max
    if n > limit:
        raise SizeError(f"Enumeration oracle is limited to n <= {limit}, got {n}.")
    if n < 0:
        raise ArgumentError(f"n must be non-negative, got {n}.")
    counts = Counter(_first_pivot_comparisons(perm) for perm in permutations(range(n)))
    total = math.factorial(n)
    return from_point_masses(
        (value, float(Fraction(count, total))) for value, count in sorted(counts.items())
    )


def quicksort_comparisons(size: int, stream: PivotStream) -> int:
    """Comparisons of randomized QuickSort on `size` distinct keys."""
    comparisons = 0
    stack = [size]
    while stack:
        length = stack.pop()
        if length <= 1:
            continue
        comparisons += length - 1
        rank = stream.next_rank(length)
        stack.append(rank)
        stack.append(length - 1 - rank)
    return comparisons


def sample_qn(n: int, seed: int) -> int:
    if n < 0:
        raise ArgumentError(f"n must be non-negative, got {n}.")
    return quicksort_comparisons(n, PivotStream(derive_rng(seed)))


def _inverse_cdf_draws(pmf: LatticePmf, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(pmf.probs)
    idx = np.searchsorted(cum, u * cum[-1], side="right")
    return pmf.offset + np.minimum(idx, pmf.size - 1)


def sample_exact(n: int, size: int, seed: int) -> np.ndarray:
    pmf = exact_pmf(n)
    return _inverse_cdf_draws(pmf, derive_rng(seed).random(size))


def _batch_chunk(n: int, size: int, seed: int, chunk_index: int) -> np.ndarray:
    rng = derive_rng(seed, chunk_index)
    totals = np.zeros(size, dtype=np.int64)
    run_ids = np.arange(size, dtype=np.int64)
    lengths = np.full(size, n, dtype=np.int64)
    leaf_runs: list[np.ndarray] = []
    leaf_lengths: list[np.ndarray] = []
    cutoff = min(LEAF_CUTOFF, get_settings().n_max)
    while lengths.size:
        small = lengths <= cutoff
        if small.any():
            leaf_runs.append(run_ids[small])
            leaf_lengths.append(lengths[small])
            run_ids = run_ids[~small]
            lengths = lengths[~small]
            if not lengths.size:
                break
        np.add.at(totals, run_ids, lengths - 1)
        ranks = np.minimum((rng.random(lengths.size) * lengths).astype(np.int64), lengths - 1)
        run_ids = np.concatenate([run_ids, run_ids])
        lengths = np.concatenate([ranks, lengths - 1 - ranks])

    if leaf_runs:
        runs = np.concatenate(leaf_runs)
        sizes = np.concatenate(leaf_lengths)
        for leaf_size in np.unique(sizes):
            if leaf_size <= 1:
                continue
            mask = sizes == leaf_size
            draws = _inverse_cdf_draws(exact_pmf(int(leaf_size)), rng.random(int(mask.sum())))
            np.add.at(totals, runs[mask], draws)
    return totals


def sample_qn_batch(n: int, size: int, seed: int, threads: int | None = None) -> np.ndarray:
    """`size` independent draws of Q_n.

    Sublists are split level by level across the whole batch; sublists of at
    most 64 keys are finished with a draw from their exact law. Chunks use
    their own derived streams so the result does not depend on `threads`.
    """
    if n < 0 or size < 0:
        raise ArgumentError("n and size must be non-negative.")
    threads = threads or get_settings().threads
    chunks = [(i, min(BATCH_CHUNK, size - start)) for i, start in enumerate(range(0, size, BATCH_CHUNK))]
    parts = ordered_map(lambda item: _batch_chunk(n, item[1], seed, item[0]), chunks, threads=threads)
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


@dataclass(frozen=True)
class NormalizedView:
    """Q_n* = (Q_n - q_n)/n over the exact law."""

    n: int
    base: LatticePmf
    q_n: float

    @property
    def points(self) -> np.ndarray:
        return (self.base.points - self.q_n) / self.n

    @property
    def probs(self) -> np.ndarray:
        return self.base.probs

    def to_raw(self, x):
        return self.q_n + self.n * np.asarray(x, dtype=np.float64)

    def mean(self) -> float:
        return float(np.dot(self.points, self.probs))

    def window_prob(self, lo: float, hi: float) -> float:
        """P(lo <= Q_n* <= hi)."""
        a = math.ceil(float(self.to_raw(lo)) - 1e-9)
        b = math.floor(float(self.to_raw(hi)) + 1e-9)
        if a > b:
            return 0.0
        return float(self.base.cdf(b) - self.base.cdf(a - 1))


def normalized(n: int) -> NormalizedView:
    if n < 1:
        raise ArgumentError("The normalized law needs n >= 1.")
    return NormalizedView(n=n, base=exact_pmf(n), q_n=mean_recurrence(n)[n])


def estimate_c1(n_range: Iterable[int]) -> float:
    ns = list(n_range)
    if not ns:
        raise ArgumentError("estimate_c1 needs a non-empty range of n.")
    worst = math.inf
    for n in ns:
        view = normalized(n)
        worst = min(worst, view.window_prob(-2.0, -1.0), view.window_prob(1.0, 2.0))
    return float(worst)
