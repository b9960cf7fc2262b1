from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

import numpy as np

from qsmooth.errors import ArgumentError

T = TypeVar("T")
R = TypeVar("R")


def _check_seed(seed: int) -> int:
    if seed is None or int(seed) < 0:
        raise ArgumentError(f"Seeds must be non-negative integers, got {seed!r}.")
    return int(seed)


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator for (seed, *keys); distinct key tuples give independent streams."""
    entropy = [_check_seed(seed), *(int(key) for key in keys)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def split_seed(seed: int, index: int) -> int:
    """Child seed for ensemble member `index`; stable across worker counts."""
    state = np.random.SeedSequence([_check_seed(seed), int(index)]).generate_state(1, np.uint64)
    return int(state[0])


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


class PivotStream:
    """Buffered uniform draws for pivot selection in pure-Python recursions."""

    def __init__(self, rng: np.random.Generator, *, chunk: int = 4096) -> None:
        self._rng = rng
        self._chunk = max(1, int(chunk))
        self._buffer: list[float] = []
        self._pos = 0

    def uniform(self) -> float:
        if self._pos >= len(self._buffer):
            self._buffer = self._rng.random(self._chunk).tolist()
            self._pos = 0
        value = self._buffer[self._pos]
        self._pos += 1
        return value

    def next_rank(self, size: int) -> int:
        # 0-based rank of the pivot in a sublist of `size` keys
        rank = int(self.uniform() * size)
        return rank if rank < size else size - 1
