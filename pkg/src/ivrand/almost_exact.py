"""Closed-form (Fieller-type) confidence sets from a quadratic inequality.

The set {tau : a tau^2 + b tau + c <= 0} approximates the inverted
randomization test. Its shape is decided by the sign of ``a`` and the
discriminant, which is why weak instruments yield unbounded sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

from ivrand.asymptotic import c_factor
from ivrand.core import Diagnostics, InferenceResult, IntervalSet, IvDataset, MomentSummary
from ivrand.estimators import moment_summary
from ivrand.normal import z_crit

__all__ = [
    "QuadraticCoefficients",
    "quadratic_coefficients",
    "solve_quadratic_leq",
    "delta_hat",
    "closed_form_endpoints",
    "almost_exact_ci",
    "compliance_threshold",
]

DISC_RTOL = 1e-12


@dataclass(frozen=True)
class QuadraticCoefficients:
    a: float
    b: float
    c: float
    alpha: float
    z_crit: float

    def __post_init__(self) -> None:
        if not self.z_crit > 0:
            raise ValueError("z_crit must be positive")
        if not all(math.isfinite(v) for v in (self.a, self.b, self.c)):
            raise ValueError("quadratic coefficients must be finite")

    @property
    def discriminant(self) -> float:
        return self.b * self.b - 4.0 * self.a * self.c


def quadratic_coefficients(ms: MomentSummary, alpha: float) -> QuadraticCoefficients:
    z = z_crit(alpha)
    z2 = z * z
    a = ms.tauD_hat**2 - z2 * ms.varD_hat
    b = -2.0 * (ms.tauD_hat * ms.tauY_hat - z2 * ms.cov_hat)
    c = ms.tauY_hat**2 - z2 * ms.varY_hat
    return QuadraticCoefficients(a, b, c, alpha, z)


def solve_quadratic_leq(qc: QuadraticCoefficients) -> IntervalSet:
    """Solve ``a x^2 + b x + c <= 0`` exactly by case analysis."""
    a, b, c = qc.a, qc.b, qc.c
    if a == 0.0:
        if b == 0.0:
            return IntervalSet.full_line() if c <= 0.0 else IntervalSet.empty()
        root = -c / b
        return IntervalSet.left_ray(root) if b > 0 else IntervalSet.right_ray(root)

    disc = b * b - 4.0 * a * c
    if abs(disc) <= DISC_RTOL * max(b * b, abs(4.0 * a * c)):
        disc = 0.0
    if disc == 0.0:
        return IntervalSet.point(-b / (2.0 * a)) if a > 0 else IntervalSet.full_line()
    if disc < 0.0:
        return IntervalSet.empty() if a > 0 else IntervalSet.full_line()

    # stable roots: avoids cancellation when b^2 >> |4ac|
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    r1 = q / a
    r2 = c / q if q != 0.0 else -r1
    lo, hi = min(r1, r2), max(r1, r2)
    if a > 0:
        return IntervalSet.bounded(lo, hi)
    return IntervalSet.two_rays(lo, hi)


def delta_hat(ms: MomentSummary) -> float:
    """tauD^4 times the delta-method variance of the Wald ratio."""
    return (
        ms.tauY_hat**2 * ms.varD_hat
        + ms.tauD_hat**2 * ms.varY_hat
        - 2.0 * ms.tauD_hat * ms.tauY_hat * ms.cov_hat
    )


def closed_form_endpoints(ms: MomentSummary, alpha: float) -> tuple[float, float]:
    """Centre -/+ spread form of the finite solution (valid when a > 0, disc > 0)."""
    z = z_crit(alpha)
    z2 = z * z
    denom = ms.tauD_hat**2 - z2 * ms.varD_hat
    centre = (ms.tauD_hat * ms.tauY_hat - z2 * ms.cov_hat) / denom
    inner = delta_hat(ms) + z2 * (ms.cov_hat**2 - ms.varD_hat * ms.varY_hat)
    spread = z * math.sqrt(inner) / denom
    return centre - spread, centre + spread


def _instrument_t(ms: MomentSummary) -> float:
    if ms.varD_hat == 0.0:
        return math.inf if ms.tauD_hat != 0.0 else math.nan
    return abs(ms.tauD_hat) / math.sqrt(ms.varD_hat)


def almost_exact_ci(ds: IvDataset, alpha: float = 0.05) -> InferenceResult:
    ms = moment_summary(ds)
    qc = quadratic_coefficients(ms, alpha)
    interval = solve_quadratic_leq(qc)
    point = ms.tauY_hat / ms.tauD_hat if ms.tauD_hat != 0.0 else None
    c_fac = None
    if ms.tauD_hat != 0.0 and ms.varY_hat > 0.0:
        c_fac = c_factor(ms)
    notes: tuple[str, ...] = ()
    if interval.is_infinite:
        notes = ("instrument not significant at level alpha; set is unbounded",)
    elif interval.kind == "empty":
        notes = ("no parameter value is compatible with the data at level alpha",)
    diag = Diagnostics(
        instrument_t=_instrument_t(ms),
        c_factor=c_fac,
        abc=(qc.a, qc.b, qc.c),
        delta_hat=delta_hat(ms),
        notes=notes,
    )
    return InferenceResult("almost_exact", point, interval, alpha, diag)


def compliance_threshold(
    n: int, alpha: float = 0.05, variance_model: Literal["total", "treated_arm"] = "total"
) -> float:
    """First-stage estimate at or below which the closed-form set is unbounded.

    Uses the plug-in variance tauD (1 - tauD) / m, where m is ``n`` for
    ``"total"`` and ``n / 2`` for ``"treated_arm"`` (balanced assignment).
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    m = n if variance_model == "total" else n / 2.0
    z2 = z_crit(alpha) ** 2
    return z2 / (m + z2)
