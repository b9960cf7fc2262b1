"""Two-phase QuickSort runs and the Q_n = A + B decompositions built on them.

Phase I splits sublists longer than r (largest first) until every sublist has
length at most r. Phase II sorts what is left. The samplers below pick some
Phase II instances as the smooth part B and charge every other comparison
to A, so A + sum(B_parts) always equals the comparisons of the full run.
"""

from __future__ import annotations

import enum
import heapq
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List

import numpy as np

from qsmooth.errors import ArgumentError
from qsmooth.pmf_core import LatticePmf, _tight
from qsmooth.quicksort_dist import exact_pmf, mean_recurrence, quicksort_comparisons
from qsmooth.seeding import PivotStream, derive_rng

logger = logging.getLogger(__name__)


class DecompositionKind(str, enum.Enum):
    PLAIN = "plain"
    TRUNCATED = "truncated"
    BINOMIAL = "binomial"


@dataclass(frozen=True)
class Phase1Result:
    n: int
    r: int
    sublists: List[int]
    active_steps: int
    comparisons_phase1: int


@dataclass
class DecompositionSample:
    kind: DecompositionKind
    n: int
    r: int | None
    A: int
    B_parts: List[int]
    part_scales: List[int]
    E_occurred: bool
    total: int
    centers: List[float] = field(default_factory=list)
    medium_count: int = 0
    event_hits: int = 0
    phase1_steps: int = 0

    @property
    def B_total(self) -> int:
        return int(sum(self.B_parts))

    def centered_parts(self) -> List[float]:
        if not self.centers:
            return [float(b) for b in self.B_parts]
        return [b - z for b, z in zip(self.B_parts, self.centers)]


def _check_even(r: int) -> None:
    if r < 2 or r % 2:
        raise ArgumentError(f"Scale r must be an even integer >= 2, got {r}.")


def _phase1(n: int, r: int, stream: PivotStream) -> tuple[Phase1Result, List[int]]:
    # heap entries: (-length, creation index)
    lengths = [n]
    heap = [(-n, 0)] if n > r else []
    split = set()
    steps = 0
    comparisons = 0
    while heap and steps < n:
        neg_len, idx = heapq.heappop(heap)
        length = -neg_len
        split.add(idx)
        steps += 1
        comparisons += length - 1
        rank = stream.next_rank(length)
        for child in (rank, length - 1 - rank):
            lengths.append(child)
            if child > r:
                heapq.heappush(heap, (-child, len(lengths) - 1))
    terminal = [length for idx, length in enumerate(lengths) if idx not in split]
    result = Phase1Result(
        n=n, r=r, sublists=terminal, active_steps=steps, comparisons_phase1=comparisons
    )
    return result, terminal


def run_phase1(n: int, r: int, seed: int) -> Phase1Result:
    _check_even(r)
    if n < 0:
        raise ArgumentError(f"n must be non-negative, got {n}.")
    result, _ = _phase1(n, r, PivotStream(derive_rng(seed)))
    return result


def count_medium_sublists(res: Phase1Result, r: int) -> int:
    return sum(1 for length in res.sublists if r / 2 <= length <= r)


def xi(n: int, r: int) -> float:
    """Expected number of Phase I sublists with length in [r/2, r]."""
    _check_even(r)
    if n < 0:
        raise ArgumentError(f"n must be non-negative, got {n}.")
    if n < r // 2:
        return 0.0
    if n <= r:
        return 1.0
    return (n + 1) / (r + 1)


def sample_decomposition(n: int, r: int, seed: int) -> DecompositionSample:
    _check_even(r)
    if r < 20 or n < 5 * r:
        raise ArgumentError(f"Plain decomposition needs r >= 20 and n >= 5r, got n={n}, r={r}.")
    stream = PivotStream(derive_rng(seed))
    phase1, terminal = _phase1(n, r, stream)
    leaf_comparisons = [quicksort_comparisons(length, stream) for length in terminal]
    total = phase1.comparisons_phase1 + sum(leaf_comparisons)

    s = math.ceil(n / (3 * r))
    medium = [i for i, length in enumerate(terminal) if r / 2 <= length <= r]
    occurred = len(medium) >= s
    chosen = medium[:s] if occurred else []
    B_parts = [leaf_comparisons[i] for i in chosen]
    return DecompositionSample(
        kind=DecompositionKind.PLAIN,
        n=n,
        r=r,
        A=total - sum(B_parts),
        B_parts=B_parts,
        part_scales=[terminal[i] for i in chosen],
        E_occurred=occurred,
        total=total,
        medium_count=len(medium),
        phase1_steps=phase1.active_steps,
    )


@lru_cache(maxsize=None)
def truncated_part_law(r_prime: int) -> tuple[LatticePmf, float]:
    """Law of Q_{r'} conditioned on |Q_{r'} - q_{r'}| <= 2r', and its mean z_{r'}."""
    pmf = exact_pmf(r_prime)
    q = mean_recurrence(r_prime)[r_prime]
    lo = max(math.ceil(q - 2 * r_prime), pmf.support_min)
    hi = min(math.floor(q + 2 * r_prime), pmf.support_max)
    window = np.array(pmf.probs[lo - pmf.offset : hi - pmf.offset + 1])
    window /= window.sum()
    conditional = _tight(lo, window)
    z = conditional.offset + float(np.dot(np.arange(conditional.size), conditional.probs))
    return conditional, z


def sample_truncated_decomposition(
    n: int,
    r: int,
    c1: float,
    c2: float | None = None,
    seed: int = 0,
    *,
    r0: int = 20,
) -> DecompositionSample:
    _check_even(r)
    c2 = c1 / 6.0 if c2 is None else c2
    if r < r0:
        raise ArgumentError(f"Truncated decomposition needs r >= r0 = {r0}, got {r}.")
    if not c2 > 0 or r > c2 * n:
        raise ArgumentError(f"Truncated decomposition needs r <= c2 n, got r={r}, c2 n={c2 * n:g}.")
    stream = PivotStream(derive_rng(seed))
    phase1, terminal = _phase1(n, r, stream)
    leaf_comparisons = [quicksort_comparisons(length, stream) for length in terminal]
    total = phase1.comparisons_phase1 + sum(leaf_comparisons)

    t = math.ceil(n / (3 * r))
    s = math.ceil(c2 * n / r)
    medium = [i for i, length in enumerate(terminal) if r / 2 <= length <= r]
    selected = medium[:t] if len(medium) >= t else []
    means = mean_recurrence(r)
    hits = [
        i for i in selected
        if abs(leaf_comparisons[i] - means[terminal[i]]) <= 2 * terminal[i]
    ]
    occurred = bool(selected) and len(hits) >= s
    chosen = hits[:s] if occurred else []
    return DecompositionSample(
        kind=DecompositionKind.TRUNCATED,
        n=n,
        r=r,
        A=total - sum(leaf_comparisons[i] for i in chosen),
        B_parts=[leaf_comparisons[i] for i in chosen],
        part_scales=[terminal[i] for i in chosen],
        E_occurred=occurred,
        total=total,
        centers=[truncated_part_law(terminal[i])[1] for i in chosen],
        medium_count=len(medium),
        event_hits=len(hits),
        phase1_steps=phase1.active_steps,
    )


def sample_binomial_decomposition(
    n: int,
    c: float = 0.04,
    seed: int = 0,
    *,
    n0: int = 3,
    c_max: float = 0.25,
) -> DecompositionSample:
    if n < n0:
        raise ArgumentError(f"Binomial decomposition needs n >= {n0}, got {n}.")
    if not 0 < c <= c_max:
        raise ArgumentError(f"Binomial decomposition needs 0 < c <= {c_max}, got {c}.")
    target = math.ceil(c * n)
    stream = PivotStream(derive_rng(seed))

    comparisons = 0
    instances = 0
    leftovers: List[int] = []
    heap: List[tuple[int, int]] = []
    created = 0

    def _place(length: int) -> None:
        nonlocal instances, created
        if length == 3 and instances < target:
            instances += 1
        elif length >= 4:
            heapq.heappush(heap, (-length, created))
        else:
            leftovers.append(length)
        created += 1

    _place(n)
    while heap and instances < target:
        length = -heapq.heappop(heap)[0]
        comparisons += length - 1
        rank = stream.next_rank(length)
        _place(rank)
        _place(length - 1 - rank)
    leftovers.extend(-neg for neg, _ in sorted(heap))

    B_parts = [quicksort_comparisons(3, stream) - 2 for _ in range(instances)]
    for length in leftovers:
        comparisons += quicksort_comparisons(length, stream)
    occurred = instances >= target
    total = comparisons + sum(B_parts) + 2 * instances
    if not occurred:
        return DecompositionSample(
            kind=DecompositionKind.BINOMIAL, n=n, r=None, A=total, B_parts=[],
            part_scales=[], E_occurred=False, total=total, event_hits=instances,
        )
    return DecompositionSample(
        kind=DecompositionKind.BINOMIAL,
        n=n,
        r=None,
        A=total - sum(B_parts) - 2 * target,
        B_parts=B_parts,
        part_scales=[3] * target,
        E_occurred=True,
        total=total,
        event_hits=instances,
    )


ENSEMBLE_HEADER = ["seed", "n", "r", "T", "X_nr", "E", "A", "B_total"]


def ensemble_row(seed: int, sample: DecompositionSample) -> list:
    return [
        seed,
        sample.n,
        sample.r if sample.r is not None else "",
        sample.phase1_steps,
        sample.medium_count,
        sample.E_occurred,
        sample.A,
        sample.B_total,
    ]
