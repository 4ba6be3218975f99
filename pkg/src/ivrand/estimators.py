"""Difference-in-means point estimates and their two-sample (co)variances."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ivrand.core import IvDataset, MomentSummary
from ivrand.errors import DegenerateArm, ZeroFirstStage, ZeroVariance

__all__ = [
    "diff_in_means",
    "wald_estimate",
    "moment_summary",
    "instrument_t_stat",
    "arm_covariance",
]


def _arms(z: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    za = np.asarray(z, dtype=float)
    t = za == 1.0
    return t, ~t


def _mean(v: np.ndarray) -> float:
    return math.fsum(v) / len(v)


def diff_in_means(v: Sequence[float], z: Sequence[float]) -> float:
    """Mean of ``v`` among z=1 units minus mean among z=0 units."""
    va = np.asarray(v, dtype=float)
    t, c = _arms(z)
    if len(va) != len(t):
        raise ValueError("v and z must have equal length")
    if not t.any() or not c.any():
        raise DegenerateArm("both arms must be non-empty")
    return _mean(va[t]) - _mean(va[c])


def arm_covariance(u: np.ndarray, v: np.ndarray) -> float:
    """Unbiased sample covariance of one arm, two-pass with compensated sums."""
    m = len(u)
    if m < 2:
        raise DegenerateArm("variance estimate needs at least two units per arm")
    du = u - _mean(u)
    dv = v - _mean(v)
    return math.fsum(du * dv) / (m - 1)


def wald_estimate(ds: IvDataset) -> float:
    """Ratio of the outcome ITT to the treatment ITT (equals the TSLS slope)."""
    tau_d = diff_in_means(ds.d, ds.z)
    if tau_d == 0.0:
        raise ZeroFirstStage("instrument has no estimated effect on treatment")
    return diff_in_means(ds.y, ds.z) / tau_d


def moment_summary(ds: IvDataset) -> MomentSummary:
    """ITT estimates plus the usual two-sample variance and covariance estimates.

    Each arm contributes its sample (co)variance divided by its size; the
    control arm is centred on its own mean.
    """
    if ds.n1 < 2 or ds.n0 < 2:
        raise DegenerateArm(f"need n1 >= 2 and n0 >= 2 (n1={ds.n1}, n0={ds.n0})")
    t, c = _arms(ds.z)
    y1, y0, d1, d0 = ds.y[t], ds.y[c], ds.d[t], ds.d[c]
    var_y = arm_covariance(y1, y1) / ds.n1 + arm_covariance(y0, y0) / ds.n0
    var_d = arm_covariance(d1, d1) / ds.n1 + arm_covariance(d0, d0) / ds.n0
    cov = arm_covariance(y1, d1) / ds.n1 + arm_covariance(y0, d0) / ds.n0
    return MomentSummary(
        tauY_hat=_mean(y1) - _mean(y0),
        tauD_hat=_mean(d1) - _mean(d0),
        varY_hat=max(var_y, 0.0),
        varD_hat=max(var_d, 0.0),
        cov_hat=cov,
    )


def instrument_t_stat(ms: MomentSummary) -> float:
    """|tauD_hat| / se(tauD_hat); +inf for an error-free nonzero first stage."""
    if ms.varD_hat == 0.0:
        if ms.tauD_hat == 0.0:
            raise ZeroVariance("first stage is identically zero with zero variance")
        return math.inf
    return abs(ms.tauD_hat / math.sqrt(ms.varD_hat))
