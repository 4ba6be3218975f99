"""Normal-approximation intervals for the Wald ratio: delta method (TSLS) and Bloom."""

from __future__ import annotations

import math

from ivrand.core import Diagnostics, InferenceResult, IntervalSet, IvDataset, MomentSummary
from ivrand.errors import ZeroFirstStage, ZeroOutcomeVariance
from ivrand.estimators import moment_summary
from ivrand.normal import z_crit

__all__ = [
    "delta_variance",
    "bloom_variance",
    "c_factor",
    "tsls_ci",
    "bloom_ci",
    "delta_rewrite_check",
]


def _require_first_stage(ms: MomentSummary) -> None:
    if ms.tauD_hat == 0.0:
        raise ZeroFirstStage("instrument has no estimated effect on treatment")


def delta_variance(ms: MomentSummary) -> float:
    _require_first_stage(ms)
    td, ty = ms.tauD_hat, ms.tauY_hat
    return ms.varY_hat / td**2 + ty**2 * ms.varD_hat / td**4 - 2.0 * ty * ms.cov_hat / td**3


def bloom_variance(ms: MomentSummary) -> float:
    """Variance of the ratio when the first stage is treated as known."""
    _require_first_stage(ms)
    return ms.varY_hat / ms.tauD_hat**2


def c_factor(ms: MomentSummary) -> float:
    """Ratio of the delta-method variance to the Bloom variance."""
    _require_first_stage(ms)
    if ms.varY_hat == 0.0:
        raise ZeroOutcomeVariance("outcome ITT has zero estimated variance")
    td, ty, vy = ms.tauD_hat, ms.tauY_hat, ms.varY_hat
    return 1.0 + ty**2 * ms.varD_hat / (td**2 * vy) - 2.0 * ty * ms.cov_hat / (td * vy)


def _symmetric(point: float, half_width: float) -> IntervalSet:
    return IntervalSet.bounded(point - half_width, point + half_width)


def _diagnostics(ms: MomentSummary) -> Diagnostics:
    t = math.inf if ms.varD_hat == 0.0 else abs(ms.tauD_hat) / math.sqrt(ms.varD_hat)
    c = c_factor(ms) if ms.varY_hat > 0.0 else None
    return Diagnostics(instrument_t=t, c_factor=c)


def tsls_ci(ds: IvDataset, alpha: float = 0.05) -> InferenceResult:
    """Wald estimate -/+ z times the delta-method standard error.

    Identical to the conventional two-stage least squares interval for a
    single binary instrument, and always bounded.
    """
    ms = moment_summary(ds)
    var = delta_variance(ms)
    point = ms.tauY_hat / ms.tauD_hat
    interval = _symmetric(point, z_crit(alpha) * math.sqrt(max(var, 0.0)))
    return InferenceResult("tsls_delta", point, interval, alpha, _diagnostics(ms))


def bloom_ci(ds: IvDataset, alpha: float = 0.05) -> InferenceResult:
    ms = moment_summary(ds)
    var = bloom_variance(ms)
    point = ms.tauY_hat / ms.tauD_hat
    interval = _symmetric(point, z_crit(alpha) * math.sqrt(var))
    return InferenceResult("bloom", point, interval, alpha, _diagnostics(ms))


def delta_rewrite_check(ms: MomentSummary, alpha: float = 0.05, rtol: float = 1e-10) -> bool:
    """Check that tau_hat -/+ z sqrt(Delta_hat) / tauD^2 reproduces the delta interval."""
    from ivrand.almost_exact import delta_hat

    if ms.tauD_hat == 0.0:
        return False
    z = z_crit(alpha)
    point = ms.tauY_hat / ms.tauD_hat
    dh = delta_hat(ms)
    var = delta_variance(ms)
    if dh < 0.0 or var < 0.0:
        return False
    half_rewrite = z * math.sqrt(dh) / ms.tauD_hat**2
    half_delta = z * math.sqrt(var)
    scale = max(abs(point) + half_delta, 1e-300)
    return all(
        abs(u - v) <= rtol * scale
        for u, v in ((point - half_rewrite, point - half_delta), (point + half_rewrite, point + half_delta))
    )
