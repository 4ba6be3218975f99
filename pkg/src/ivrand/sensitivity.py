"""Bounds on randomization p-values when assignment odds may differ by up to Gamma.

Each unit's odds of z = 1 may be inflated by a factor of at most Gamma
through an unobserved binary confounder u; n1 stays fixed, so an assignment
z has probability proportional to Gamma ** (z . u). The most damaging u
marks the k units with the largest contributions to the observed deviation
(smallest for the lower bound), and the bound is the extreme over k.

Under such a design the number h of marked units that are treated follows
Fisher's noncentral hypergeometric law. h is drawn by inverse CDF and the
treated units inside each group are taken in the order of a shared
uniform key per unit. These common random numbers make the statistic of
every draw a function of h alone, so one table per marked set serves all
Gamma. Bounds are evaluated on a fixed Gamma grid and taken as running
extremes along it: the design family grows with Gamma, which makes both
bounds monotone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from scipy.special import gammaln
from scipy.stats import rankdata

from ivrand.core import IvDataset
from ivrand.errors import InvalidGamma
from ivrand.exact import StudentizedNull, studentized_statistic
from ivrand.permutation import PermutationEngine
from ivrand.rank import RankSumNull, rank_adjusted

__all__ = ["GammaModel", "gamma_pvalue_bounds", "sensitivity_value", "SensitivityRow", "gamma_sweep", "gamma_grid"]

Statistic = Literal["studentized", "rank_sum"]

# stream label keeps sensitivity draws independent of the engine's permutation draws
_STREAM = 0x5E45
_MAX_K_GRID = 41
_ARITH_STEP = 0.005
_ARITH_TOP = 10.0
_GEOM_RATIO = 1.0005


@dataclass(frozen=True)
class GammaModel:
    gamma: float

    def __post_init__(self) -> None:
        if not (self.gamma >= 1.0):
            raise InvalidGamma(f"Gamma must be >= 1, got {self.gamma}")


def _fisher_nch_cdf(k: int, n: int, n1: int, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Support and CDF of treated-marked count h given k marked units."""
    lo, hi = max(0, n1 - (n - k)), min(k, n1)
    h = np.arange(lo, hi + 1)
    logw = (
        gammaln(k + 1) - gammaln(h + 1) - gammaln(k - h + 1)
        + gammaln(n - k + 1) - gammaln(n1 - h + 1) - gammaln(n - k - n1 + h + 1)
        + h * math.log(gamma)
    )
    w = np.exp(logw - logw.max())
    cdf = np.cumsum(w)
    return h, cdf / cdf[-1]


def _k_grid(n: int) -> np.ndarray:
    if n + 1 <= _MAX_K_GRID:
        return np.arange(n + 1)
    return np.unique(np.round(np.linspace(0, n, _MAX_K_GRID)).astype(int))


class _BiasedSampler:
    """Common random numbers for biased draws: a key order and an h-quantile per draw."""

    def __init__(self, n: int, n1: int, draws: int, seed: int):
        rng = np.random.default_rng([seed, _STREAM])
        self.n, self.n1 = n, n1
        self.order = np.argsort(rng.random((draws, n)), axis=1)
        self.u = rng.random(draws)
        self.u_order = np.argsort(self.u, kind="stable")
        self.u_sorted = self.u[self.u_order]

    def treated_sums(self, marked: np.ndarray, ordered_values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Treated-arm sums for every feasible count h of treated marked units.

        Draw r treats the first h marked and the first n1 - h unmarked units
        in its key order. ``ordered_values[r, j]`` holds the values of unit
        ``order[r, j]``. Returns the support of h and an array of shape
        (draws, len(support), columns).
        """
        k = int(marked.sum())
        draws, n, cols = ordered_values.shape
        lo, hi = max(0, self.n1 - (n - k)), min(k, self.n1)
        support = np.arange(lo, hi + 1)
        hm = marked[self.order]
        zero = np.zeros((draws, 1, cols))
        cum_m = np.concatenate([zero, np.cumsum(ordered_values[hm].reshape(draws, k, cols), axis=1)], axis=1)
        cum_u = np.concatenate([zero, np.cumsum(ordered_values[~hm].reshape(draws, n - k, cols), axis=1)], axis=1)
        return support, cum_m[:, support, :] + cum_u[:, self.n1 - support, :]

    def hits_on_grid(self, hits: np.ndarray, log_base: np.ndarray, log_grid: np.ndarray, support: np.ndarray) -> np.ndarray:
        """Number of hitting draws at each Gamma in the grid.

        ``hits[r, j]`` says whether draw r exceeds the observed statistic
        when h = support[j]. Draw r takes h_j when F_{j-1} < u_r <= F_j,
        where F is the noncentral hypergeometric CDF at that Gamma.
        """
        P = np.zeros((len(self.u) + 1, hits.shape[1]), dtype=np.int64)
        np.cumsum(hits[self.u_order], axis=0, out=P[1:])
        logw = log_base[None, :] + log_grid[:, None] * support[None, :]
        w = np.exp(logw - logw.max(axis=1, keepdims=True))
        F = np.cumsum(w, axis=1)
        F /= F[:, -1:]
        F[:, -1] = 1.0
        upto = np.searchsorted(self.u_sorted, F, side="right")
        below = np.concatenate([np.zeros((len(log_grid), 1), dtype=upto.dtype), upto[:, :-1]], axis=1)
        cols = np.arange(hits.shape[1])[None, :]
        return (P[upto, cols] - P[below, cols]).sum(axis=1)


def _log_base(k: int, n: int, n1: int, support: np.ndarray) -> np.ndarray:
    h = support
    return (
        gammaln(k + 1) - gammaln(h + 1) - gammaln(k - h + 1)
        + gammaln(n - k + 1) - gammaln(n1 - h + 1) - gammaln(n - k - n1 + h + 1)
    )


def gamma_grid(gamma_hi: float) -> np.ndarray:
    """Gamma values above 1 at which bounds are evaluated, up to ``gamma_hi``.

    Steps of 0.005 up to 10, then a ratio of 1.0005.
    """
    if gamma_hi <= 1.0:
        return np.empty(0)
    top = min(gamma_hi, _ARITH_TOP)
    m = int(math.floor((top - 1.0) / _ARITH_STEP + 1e-9))
    parts = [np.round(1.0 + _ARITH_STEP * np.arange(1, m + 1), 10)]
    if gamma_hi > _ARITH_TOP:
        j = int(math.floor(math.log(gamma_hi / _ARITH_TOP) / math.log(_GEOM_RATIO) + 1e-9))
        parts.append(_ARITH_TOP * _GEOM_RATIO ** np.arange(1, j + 1))
    return np.concatenate(parts)


def _tail(hits, draws: int):
    return (1 + hits) / (draws + 1)


def gamma_pvalue_bounds(
    ds: IvDataset,
    tau0: float,
    gm: GammaModel | float,
    stat: Statistic = "studentized",
    eng: Optional[PermutationEngine] = None,
) -> tuple[float, float]:
    """Lower and upper bounds on the randomization p-value at sensitivity Gamma.

    At Gamma = 1 both equal the ordinary randomization p-value. For larger
    Gamma the bounds are the extremes over every biased design evaluated
    at grid values up to Gamma (see :func:`gamma_grid`), so they bracket the
    Gamma = 1 value and are monotone in Gamma.
    """
    gm = gm if isinstance(gm, GammaModel) else GammaModel(float(gm))
    eng = eng or PermutationEngine()
    return _Bounds(ds, tau0, stat, eng).at(gm.gamma)


class _Bounds:
    """Reusable pieces for evaluating the bounds at several Gamma values."""

    def __init__(self, ds: IvDataset, tau0: float, stat: Statistic, eng: PermutationEngine):
        if stat not in ("studentized", "rank_sum"):
            raise ValueError(f"unknown statistic {stat!r}")
        self.ds, self.tau0, self.stat, self.eng = ds, tau0, stat, eng
        q = rank_adjusted(ds, tau0)
        if stat == "studentized":
            self.null = StudentizedNull(ds, eng)
            self.p1 = self.null.pvalue(tau0)
            T, _ = studentized_statistic(q, ds.z)
            self.contrib = (1.0 if T >= 0 else -1.0) * q
            self.t_obs = self.null.observed_ratio(tau0)
            values = self.null.unit_columns
        else:
            self.null = RankSumNull(ds, eng)
            self.p1 = self.null.pvalue(tau0)
            self.ranks = rankdata(q, method="average")
            self.w_obs = float(self.ranks[ds.z == 1.0].sum())
            self.sign = 1.0 if self.w_obs >= ds.n1 * (ds.n + 1) / 2.0 else -1.0
            self.contrib = self.sign * self.ranks
            values = self.ranks[:, None]
        self.sampler = _BiasedSampler(ds.n, ds.n1, eng.draws, eng.seed)
        self.ordered_values = values[self.sampler.order]
        self.by_contrib = np.argsort(-self.contrib, kind="stable")
        self._grid = np.empty(0)
        self._low = np.empty(0)
        self._high = np.empty(0)

    def _hits(self, sums: np.ndarray) -> np.ndarray:
        draws, s, cols = sums.shape
        if self.stat == "studentized":
            r = self.null.ratios_from_sums(sums.reshape(draws * s, cols), self.tau0).reshape(draws, s)
            if math.isinf(self.t_obs):
                return np.isinf(r)
            return r >= self.t_obs - 1e-9 * max(1.0, self.t_obs)
        return self.sign * sums[:, :, 0] >= self.sign * self.w_obs - 1e-9

    def _pvalues(self, hits) -> np.ndarray:
        p = _tail(hits, self.eng.draws)
        return np.minimum(1.0, p if self.stat == "studentized" else 2.0 * p)

    def _extend(self, gamma_hi: float) -> None:
        grid = gamma_grid(gamma_hi)
        if len(grid) <= len(self._grid):
            return
        n, n1 = self.ds.n, self.ds.n1
        log_grid = np.log(grid)
        low = np.full(len(grid), self.p1)
        high = np.full(len(grid), self.p1)
        for k in _k_grid(n):
            if k == 0 or k == n:
                continue  # no unit is distinguishable: uniform design
            for marked_idx, is_top in ((self.by_contrib[:k], True), (self.by_contrib[n - k :], False)):
                marked = np.zeros(n, dtype=bool)
                marked[marked_idx] = True
                support, sums = self.sampler.treated_sums(marked, self.ordered_values)
                counts = self.sampler.hits_on_grid(
                    self._hits(sums), _log_base(k, n, n1, support), log_grid, support
                )
                p = self._pvalues(counts)
                if is_top:
                    np.maximum(high, p, out=high)
                else:
                    np.minimum(low, p, out=low)
        # a design allowed at Gamma is allowed at every larger Gamma
        self._grid = grid
        self._high = np.maximum.accumulate(high)
        self._low = np.minimum.accumulate(low)

    def at(self, gamma: float) -> tuple[float, float]:
        if gamma < 1.0:
            raise InvalidGamma(f"Gamma must be >= 1, got {gamma}")
        if not self._grid.size or gamma > self._grid[-1]:
            self._extend(gamma)
        i = int(np.searchsorted(self._grid, gamma * (1.0 + 1e-12), side="right")) - 1
        if i < 0:
            return self.p1, self.p1
        return float(self._low[i]), float(self._high[i])

    def crossing(self, alpha: float, gamma_max: float) -> float:
        """Smallest grid Gamma whose upper bound exceeds ``alpha``; inf if none up to ``gamma_max``."""
        hi = 8.0
        while True:
            self._extend(min(hi, gamma_max))
            above = np.nonzero(self._high > alpha)[0]
            if above.size:
                return float(self._grid[above[0]])
            if hi >= gamma_max:
                return math.inf
            hi *= 16.0


@dataclass(frozen=True)
class SensitivityRow:
    gamma: float
    p_low: float
    p_high: float


def gamma_sweep(
    ds: IvDataset,
    tau0: float,
    gammas: list[float],
    stat: Statistic = "studentized",
    eng: Optional[PermutationEngine] = None,
) -> list[SensitivityRow]:
    bounds = _Bounds(ds, tau0, stat, eng or PermutationEngine())
    if gammas:
        bounds._extend(max(gammas))
    return [SensitivityRow(g, *bounds.at(g)) for g in gammas]


def sensitivity_value(
    ds: IvDataset,
    tau0: float,
    alpha: float = 0.05,
    stat: Statistic = "studentized",
    eng: Optional[PermutationEngine] = None,
    gamma_max: float = 2.0**20,
) -> float:
    """Smallest Gamma at which the upper p-value bound exceeds ``alpha``.

    Resolved on the evaluation grid (0.005 up to Gamma = 10, 0.05% beyond).
    Returns 1.0 when the test does not reject at Gamma = 1, and ``inf`` if
    the bound stays below ``alpha`` up to ``gamma_max``.
    """
    bounds = _Bounds(ds, tau0, stat, eng or PermutationEngine())
    if bounds.p1 > alpha:
        return 1.0
    return bounds.crossing(alpha, gamma_max)
