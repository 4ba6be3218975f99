"""Assignment generation for randomization tests.

Assignments are produced in fixed-size chunks. Under Monte Carlo each chunk
draws from its own generator seeded by ``(seed, chunk_index)``, so the set of
assignments (and every count reduced over it) does not depend on how many
workers process the chunks.
"""

from __future__ import annotations

import functools
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, Literal

import numpy as np

from ivrand.errors import EnumerationTooLarge

__all__ = ["PermutationEngine", "project_assignments"]

Mode = Literal["auto", "enumerate", "monte_carlo"]


@dataclass(frozen=True)
class PermutationEngine:
    """How the null distribution over instrument assignments is explored.

    Parameters
    ----------
    mode : {"auto", "enumerate", "monte_carlo"}
        ``auto`` enumerates when C(n, n1) <= ``enumeration_cap`` and falls
        back to Monte Carlo otherwise.
    draws : int
        Monte Carlo sample size (at least 1000).
    seed : int
        Root seed for Monte Carlo draws.
    enumeration_cap : int
        Largest number of assignments that will be enumerated.
    workers : int
        Threads used to process chunks; never changes the result.
    """

    mode: Mode = "auto"
    draws: int = 10_000
    seed: int = 0
    enumeration_cap: int = 2_000_000
    workers: int = 1
    chunk_size: int = 16_384

    def __post_init__(self) -> None:
        if self.mode not in ("auto", "enumerate", "monte_carlo"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.draws < 1000:
            raise ValueError("Monte Carlo needs at least 1000 draws")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.enumeration_cap < 1 or self.workers < 1 or self.chunk_size < 1:
            raise ValueError("enumeration_cap, workers and chunk_size must be positive")

    def resolve(self, n: int, n1: int) -> Literal["enumerate", "monte_carlo"]:
        size = math.comb(n, n1)
        if self.mode == "enumerate":
            if size > self.enumeration_cap:
                raise EnumerationTooLarge(
                    f"C({n},{n1}) = {size} exceeds enumeration cap {self.enumeration_cap}"
                )
            return "enumerate"
        if self.mode == "monte_carlo":
            return "monte_carlo"
        return "enumerate" if size <= self.enumeration_cap else "monte_carlo"

    def n_assignments(self, n: int, n1: int) -> int:
        return math.comb(n, n1) if self.resolve(n, n1) == "enumerate" else self.draws

    def chunk_makers(self, n: int, n1: int) -> list[Callable[[], np.ndarray]]:
        """Zero-argument callables, each returning one boolean chunk of assignments."""
        if self.resolve(n, n1) == "enumerate":
            total = math.comb(n, n1)
            _all_combinations(n, n1)  # build once before any worker thread asks
            starts = range(0, total, self.chunk_size)
            return [lambda s=s: _enumerated_chunk(n, n1, s, min(self.chunk_size, total - s)) for s in starts]
        makers = []
        for idx, start in enumerate(range(0, self.draws, self.chunk_size)):
            size = min(self.chunk_size, self.draws - start)
            makers.append(lambda idx=idx, size=size: _random_chunk(n, n1, size, self.seed, idx))
        return makers

    def assignments(self, n: int, n1: int) -> Iterator[np.ndarray]:
        for make in self.chunk_makers(n, n1):
            yield make()


@functools.lru_cache(maxsize=2)
def _all_combinations(n: int, n1: int) -> np.ndarray:
    total = math.comb(n, n1)
    flat = itertools.chain.from_iterable(itertools.combinations(range(n), n1))
    idx = np.fromiter(flat, dtype=np.int16 if n < 32768 else np.intp, count=total * n1)
    idx = idx.reshape(total, n1)
    idx.setflags(write=False)
    return idx


def _enumerated_chunk(n: int, n1: int, start: int, size: int) -> np.ndarray:
    idx = _all_combinations(n, n1)[start : start + size]
    out = np.zeros((size, n), dtype=bool)
    np.put_along_axis(out, idx.astype(np.intp), True, axis=1)
    return out


def _random_chunk(n: int, n1: int, size: int, seed: int, chunk: int) -> np.ndarray:
    rng = np.random.default_rng([seed, chunk])
    keys = rng.random((size, n))
    chosen = np.argpartition(keys, n1 - 1, axis=1)[:, :n1]
    out = np.zeros((size, n), dtype=bool)
    np.put_along_axis(out, chosen, True, axis=1)
    return out


def project_assignments(
    eng: PermutationEngine,
    n: int,
    n1: int,
    fn: Callable[[np.ndarray], np.ndarray],
) -> np.ndarray:
    """Apply ``fn`` to every assignment chunk and stack the results in order."""
    makers = eng.chunk_makers(n, n1)
    task = lambda make: fn(make())  # noqa: E731
    if eng.workers == 1 or len(makers) == 1:
        parts = [task(m) for m in makers]
    else:
        with ThreadPoolExecutor(max_workers=eng.workers) as pool:
            parts = list(pool.map(task, makers))
    return np.concatenate(parts, axis=0)
