"""Confidence sets by inverting a family of tests over a parameter grid."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from ivrand.core import IntervalSet
from ivrand.errors import GridTooCoarse

__all__ = ["GridSpec", "InversionOutcome", "invert_test"]


@dataclass(frozen=True)
class GridSpec:
    """Search settings for test inversion.

    ``lo``/``hi`` fix the initial bracket; when left as ``None`` the caller
    supplies one. ``refine_tolerance`` is relative to the bracket width.
    """

    lo: Optional[float] = None
    hi: Optional[float] = None
    coarse_points: int = 100
    refine_tolerance: float = 1e-7
    max_refinements: int = 80
    max_expansions: int = 10

    def __post_init__(self) -> None:
        if self.coarse_points < 50:
            raise ValueError("coarse_points must be at least 50")
        if (self.lo is None) != (self.hi is None):
            raise ValueError("give both lo and hi or neither")
        if self.lo is not None and not self.lo < self.hi:
            raise ValueError("need lo < hi")
        if not self.refine_tolerance > 0:
            raise ValueError("refine_tolerance must be positive")


@dataclass(frozen=True)
class InversionOutcome:
    interval: IntervalSet
    runs: tuple[tuple[float, float], ...]
    bracket: tuple[float, float]
    evaluations: int

    @property
    def convex(self) -> bool:
        if len(self.runs) <= 1:
            return True
        return len(self.runs) == 2 and self.runs[0][0] == -math.inf and self.runs[1][1] == math.inf


def _assemble(runs: list[tuple[float, float]]) -> IntervalSet:
    if not runs:
        return IntervalSet.empty()
    lo, hi = runs[0][0], runs[-1][1]
    if len(runs) >= 2 and lo == -math.inf and hi == math.inf:
        # widest rejected gap becomes the hole between the rays
        gaps = [(runs[i + 1][0] - runs[i][1], i) for i in range(len(runs) - 1)]
        _, i = max(gaps)
        return IntervalSet.two_rays(runs[i][1], runs[i + 1][0])
    if lo == -math.inf and hi == math.inf:
        return IntervalSet.full_line()
    if lo == -math.inf:
        return IntervalSet.left_ray(hi)
    if hi == math.inf:
        return IntervalSet.right_ray(lo)
    return IntervalSet.bounded(lo, hi)


def invert_test(
    pvalue: Callable[[float], float],
    alpha: float,
    bracket: tuple[float, float],
    grid: GridSpec,
    retained_at_infinity: Union[bool, tuple[bool, bool]],
    anchor: Optional[float] = None,
) -> InversionOutcome:
    """Collect {x : pvalue(x) >= alpha} as an :class:`IntervalSet`.

    The bracket is widened until both edge points agree with the known
    behaviour far out (``retained_at_infinity``, one flag for both tails or
    a ``(left, right)`` pair). Each retain/reject switch on
    the coarse grid is then bisected. Several retained runs are reported as
    their hull (or as two rays around the widest gap when both tails are
    retained); ``runs`` keeps the raw pieces.
    """
    if isinstance(retained_at_infinity, tuple):
        far_left, far_right = retained_at_infinity
    else:
        far_left = far_right = retained_at_infinity
    evaluations = 0

    def keep(x: float) -> bool:
        nonlocal evaluations
        evaluations += 1
        return pvalue(x) >= alpha

    lo, hi = (grid.lo, grid.hi) if grid.lo is not None else bracket
    for _ in range(grid.max_expansions + 1):
        xs = np.linspace(lo, hi, grid.coarse_points)
        if anchor is not None and lo < anchor < hi:
            xs = np.union1d(xs, [anchor])
        kept = np.array([keep(float(x)) for x in xs])
        if kept[0] == far_left and kept[-1] == far_right:
            break
        centre, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        lo, hi = centre - 4.0 * half, centre + 4.0 * half
    else:
        raise GridTooCoarse(
            f"retention at the bracket edges never matched the limiting behaviour "
            f"after {grid.max_expansions} expansions (bracket [{lo:.6g}, {hi:.6g}])"
        )

    tol = grid.refine_tolerance * (hi - lo)

    def boundary(inside: float, outside: float) -> float:
        for _ in range(grid.max_refinements):
            if abs(outside - inside) <= tol:
                return inside
            mid = 0.5 * (inside + outside)
            if keep(mid):
                inside = mid
            else:
                outside = mid
        if abs(outside - inside) > tol:
            raise GridTooCoarse("bisection budget exhausted before reaching tolerance")
        return inside

    runs: list[tuple[float, float]] = []
    i, m = 0, len(xs)
    while i < m:
        if not kept[i]:
            i += 1
            continue
        j = i
        while j + 1 < m and kept[j + 1]:
            j += 1
        start = -math.inf if i == 0 else boundary(float(xs[i]), float(xs[i - 1]))
        end = math.inf if j == m - 1 else boundary(float(xs[j]), float(xs[j + 1]))
        runs.append((start, end))
        i = j + 1
    return InversionOutcome(_assemble(runs), tuple(runs), (float(lo), float(hi)), evaluations)
