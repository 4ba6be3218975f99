"""Randomization test of H0: tau = tau0 with a studentized difference in means.

For every assignment the arm means and within-arm (co)variances of Y and D
are computed once. T(tau0) and S^2(tau0) are then linear and quadratic in
tau0, so p-values along a grid only cost one vectorised pass each, and the
same assignments are reused for every tau0 (common random numbers under
Monte Carlo).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ivrand.almost_exact import almost_exact_ci
from ivrand.core import Diagnostics, InferenceResult, IntervalSet, IvDataset
from ivrand.errors import DegenerateArm
from ivrand.estimators import moment_summary
from ivrand.inversion import GridSpec, invert_test
from ivrand.permutation import PermutationEngine, project_assignments

__all__ = [
    "TestResult",
    "adjusted_responses",
    "studentized_statistic",
    "StudentizedNull",
    "permutation_pvalue",
    "exact_ci",
    "default_bracket",
]

# relative size below which T or S is treated as exactly zero
_ZERO_RTOL = 1e-10
# relative tolerance for ties between permuted and observed statistics
_TIE_RTOL = 1e-9


@dataclass(frozen=True)
class TestResult:
    t_obs: float
    p_value: float
    n_draws: int

    __test__ = False  # not a pytest class

    def __post_init__(self) -> None:
        if not 0.0 < self.p_value <= 1.0:
            raise ValueError(f"p-value must lie in (0, 1], got {self.p_value}")


def adjusted_responses(ds: IvDataset, tau0: float) -> np.ndarray:
    """Outcome with the hypothesised treatment effect removed, Y - D tau0."""
    return ds.y - ds.d * tau0


def studentized_statistic(q: Sequence[float], z: Sequence[float]) -> tuple[float, float]:
    """Difference in arm means of ``q`` and its two-sample standard error."""
    qa = np.asarray(q, dtype=float)
    za = np.asarray(z, dtype=float)
    t = za == 1.0
    n1, n0 = int(t.sum()), int((~t).sum())
    if n1 < 2 or n0 < 2:
        raise DegenerateArm("studentized statistic needs two units per arm")
    q1, q0 = qa[t], qa[~t]
    T = math.fsum(q1) / n1 - math.fsum(q0) / n0
    s1 = math.fsum((q1 - math.fsum(q1) / n1) ** 2) / (n1 - 1)
    s0 = math.fsum((q0 - math.fsum(q0) / n0) ** 2) / (n0 - 1)
    return T, math.sqrt(s1 / n1 + s0 / n0)


def _unit_columns(y: np.ndarray, d: np.ndarray) -> np.ndarray:
    return np.column_stack([y, d, y * y, y * d, d * d])


def _moments_from_sums(treated: np.ndarray, totals: np.ndarray, n1: int, n0: int) -> np.ndarray:
    """Per-assignment statistic pieces from treated-arm sums of the unit columns.

    Columns of the result: mean difference of y, mean difference of d, and
    the constant, linear and quadratic coefficients of S^2 in tau0.
    """
    out = np.empty((len(treated), 5))
    arms = []
    for sums, k in ((treated, n1), (totals - treated, n0)):
        sy, sd, syy, syd, sdd = (sums[:, i] for i in range(5))
        my, md = sy / k, sd / k
        vyy = np.maximum(syy - sy * my, 0.0) / (k - 1)
        vdd = np.maximum(sdd - sd * md, 0.0) / (k - 1)
        vyd = (syd - sy * md) / (k - 1)
        arms.append((my, md, vyy / k, vyd / k, vdd / k))
    (my1, md1, a1, b1, c1), (my0, md0, a0, b0, c0) = arms
    out[:, 0] = my1 - my0
    out[:, 1] = md1 - md0
    out[:, 2] = a1 + a0
    out[:, 3] = b1 + b0
    out[:, 4] = c1 + c0
    return out


def _ratios(mom: np.ndarray, tau0: float, scale: float) -> np.ndarray:
    """|T/S| from per-assignment moments; S = 0 maps to 0 (T = 0) or +inf."""
    T = mom[..., 0] - tau0 * mom[..., 1]
    S2 = mom[..., 2] - 2.0 * tau0 * mom[..., 3] + tau0 * tau0 * mom[..., 4]
    S = np.sqrt(np.maximum(S2, 0.0))
    T = np.where(np.abs(T) <= _ZERO_RTOL * scale, 0.0, np.abs(T))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(S <= _ZERO_RTOL * scale, np.where(T == 0.0, 0.0, np.inf), T / S)


class StudentizedNull:
    """Null distribution of |T(tau0)/S(tau0)| over the assignment set.

    Built once per (dataset, engine); :meth:`pvalue` is then cheap for any
    tau0.
    """

    def __init__(self, ds: IvDataset, eng: PermutationEngine):
        if ds.n1 < 2 or ds.n0 < 2:
            raise DegenerateArm("studentized statistic needs two units per arm")
        self.ds = ds
        self.engine = eng
        self.mode = eng.resolve(ds.n, ds.n1)
        # centring leaves T and S unchanged and limits cancellation
        y = ds.y - ds.y.mean()
        d = ds.d - ds.d.mean()
        self._columns = _unit_columns(y, d)
        self._totals = self._columns.sum(axis=0)
        self._moments = project_assignments(eng, ds.n, ds.n1, self.moments)
        self._observed = self.moments(ds.z[None, :] == 1.0)[0]
        n = ds.n
        self._tot = (float(y @ y) / n, float(y @ d) / n, float(d @ d) / n)

    @property
    def unit_columns(self) -> np.ndarray:
        return self._columns

    def moments(self, masks: np.ndarray) -> np.ndarray:
        return self.moments_from_sums(masks.astype(float) @ self._columns)

    def moments_from_sums(self, treated_sums: np.ndarray) -> np.ndarray:
        return _moments_from_sums(treated_sums, self._totals, self.ds.n1, self.ds.n0)

    def ratios_from_sums(self, treated_sums: np.ndarray, tau0: float) -> np.ndarray:
        return _ratios(self.moments_from_sums(treated_sums), tau0, self._scale(tau0))

    def ratios(self, masks: np.ndarray, tau0: float) -> np.ndarray:
        """|T/S| at ``tau0`` for arbitrary assignment masks."""
        return _ratios(self.moments(masks), tau0, self._scale(tau0))

    @property
    def n_draws(self) -> int:
        return len(self._moments)

    def observed_ratio(self, tau0: float) -> float:
        return float(_ratios(self._observed, tau0, self._scale(tau0)))

    def _scale(self, tau0: float) -> float:
        vyy, vyd, vdd = self._tot
        return math.sqrt(max(vyy - 2.0 * tau0 * vyd + tau0 * tau0 * vdd, 0.0))

    def _count(self, ratios: np.ndarray, t_obs: float) -> int:
        if math.isinf(t_obs):
            return int(np.count_nonzero(np.isinf(ratios)))
        return int(np.count_nonzero(ratios >= t_obs - _TIE_RTOL * max(1.0, t_obs)))

    def _p(self, hits: int) -> float:
        if self.mode == "enumerate":
            return hits / self.n_draws
        return (1 + hits) / (self.n_draws + 1)

    def test(self, tau0: float) -> TestResult:
        scale = self._scale(tau0)
        if scale == 0.0:
            return TestResult(0.0, 1.0, self.n_draws)
        t_obs = float(_ratios(self._observed, tau0, scale))
        hits = self._count(_ratios(self._moments, tau0, scale), t_obs)
        return TestResult(t_obs, min(1.0, self._p(hits)), self.n_draws)

    def pvalue(self, tau0: float) -> float:
        return self.test(tau0).p_value

    def limit_pvalue(self, sign: float = 1.0) -> float:
        """p-value as tau0 -> sign * infinity.

        The leading term is the studentized first-stage statistic. With a
        discrete treatment many assignments tie the observed value there, so
        the comparison falls through to the next terms of the expansion of
        (T/S)^2 in u = 1/tau0, which differ in sign between the two tails.
        """
        keys = _limit_keys(self._moments, sign, self._tot)
        obs = _limit_keys(self._observed[None, :], sign, self._tot)[0]
        hits = int(np.count_nonzero(_lex_geq(keys, obs)))
        return min(1.0, self._p(hits))


def _limit_keys(mom: np.ndarray, sign: float, tot: tuple[float, float, float]) -> np.ndarray:
    """Lexicographic keys ordering (T/S)^2 as tau0 -> sign * infinity.

    With u = 1/tau0, (T/S)^2 = (md - u my)^2 / (C - 2uB + u^2 A), expanded
    as k0 + u k1 + u^2 k2 + ...; ``sign * k1`` orders the first-order term.
    """
    my, md, A, B, C = (mom[:, i] for i in range(5))
    vyy, _, vdd = tot
    md = np.where(np.abs(md) <= _ZERO_RTOL * math.sqrt(vdd), 0.0, md)
    c_zero = C <= (_ZERO_RTOL**2) * vdd
    keys = np.zeros((len(mom), 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        safe_c = np.where(c_zero, 1.0, C)
        k0 = md * md / safe_c
        k1 = 2.0 * md * (md * B - my * safe_c) / (safe_c * safe_c)
        k2 = np.where(md == 0.0, my * my / safe_c, 0.0)
        # C = 0: T/S grows without bound when md != 0, else stays at |my| / sqrt(A)
        a_zero = A <= (_ZERO_RTOL**2) * max(vyy, 1e-300)
        const = np.where(a_zero, np.where(my == 0.0, 0.0, np.inf), my * my / np.where(a_zero, 1.0, A))
        keys[:, 0] = np.where(c_zero, np.where(md != 0.0, np.inf, const), k0)
        keys[:, 1] = np.where(c_zero, 0.0, sign * k1)
        keys[:, 2] = np.where(c_zero, 0.0, k2)
    return keys


def _lex_geq(keys: np.ndarray, obs: np.ndarray) -> np.ndarray:
    """Row-wise ``keys >= obs`` in lexicographic order, with relative tie tolerance."""
    out = np.ones(len(keys), dtype=bool)
    undecided = np.ones(len(keys), dtype=bool)
    for j in range(keys.shape[1]):
        k, o = keys[:, j], obs[j]
        if math.isinf(o):
            tie = k == o
        else:
            tol = _TIE_RTOL * max(1.0, abs(o))
            tie = np.abs(k - o) <= tol
        greater = ~tie & (k > o)
        out = np.where(undecided & ~tie, greater, out)
        undecided &= tie
    return out


def permutation_pvalue(
    ds: IvDataset, tau0: float, eng: Optional[PermutationEngine] = None
) -> TestResult:
    """Two-sided randomization p-value for H0: tau = tau0."""
    return StudentizedNull(ds, eng or PermutationEngine()).test(tau0)


def default_bracket(ds: IvDataset) -> tuple[float, float]:
    """Starting search bracket built from the closed-form approximation.

    A finite closed-form set is inflated threefold about its centre; two rays
    use the hole between them. Otherwise the Wald estimate -/+ ten
    delta-method (or Bloom-type) standard errors.
    """
    ae = almost_exact_ci(ds)
    iv = ae.interval
    if iv.kind in ("bounded", "two_rays") and iv.hi > iv.lo:
        centre, half = 0.5 * (iv.lo + iv.hi), 0.5 * (iv.hi - iv.lo)
        return centre - 3.0 * half, centre + 3.0 * half
    ms = moment_summary(ds)
    if ms.tauD_hat != 0.0:
        centre = ms.tauY_hat / ms.tauD_hat
        dh = ms.tauY_hat**2 * ms.varD_hat + ms.tauD_hat**2 * ms.varY_hat - 2 * ms.tauD_hat * ms.tauY_hat * ms.cov_hat
        width = math.sqrt(max(dh, 0.0)) / ms.tauD_hat**2
        if not width > 0.0:
            width = math.sqrt(ms.varY_hat) / abs(ms.tauD_hat)
    else:
        centre = 0.0
        width = math.sqrt(ms.varY_hat) / max(math.sqrt(ms.varD_hat), 1e-12)
    if not (width > 0.0 and math.isfinite(width)):
        width = max(1.0, abs(centre))
    return centre - 10.0 * width, centre + 10.0 * width


def exact_ci(
    ds: IvDataset,
    alpha: float = 0.05,
    eng: Optional[PermutationEngine] = None,
    grid: Optional[GridSpec] = None,
) -> InferenceResult:
    """Confidence set {tau0 : p(tau0) >= alpha} from the randomization test."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    eng = eng or PermutationEngine()
    grid = grid or GridSpec()
    null = StudentizedNull(ds, eng)
    ms = moment_summary(ds)
    point = ms.tauY_hat / ms.tauD_hat if ms.tauD_hat != 0.0 else None
    t_inst = math.inf if ms.varD_hat == 0.0 else abs(ms.tauD_hat) / math.sqrt(ms.varD_hat)

    if np.ptp(ds.d) == 0.0:
        # T does not depend on tau0: the set is everything or nothing
        interval = IntervalSet.full_line() if null.pvalue(0.0) >= alpha else IntervalSet.empty()
        notes: tuple[str, ...] = ("treatment is constant; tau is not identified",)
    else:
        retained_far = (null.limit_pvalue(-1.0) >= alpha, null.limit_pvalue(+1.0) >= alpha)
        outcome = invert_test(
            null.pvalue, alpha, default_bracket(ds), grid, retained_far, anchor=point
        )
        interval = outcome.interval
        notes = ()
        if not outcome.convex:
            notes = (f"retained set has {len(outcome.runs)} pieces; reported as their hull",)
        if interval.is_infinite:
            notes += ("instrument is weak at level alpha; set is unbounded",)
    diag = Diagnostics(instrument_t=t_inst, n_permutations=null.n_draws, notes=notes)
    return InferenceResult("exact", point, interval, alpha, diag)
