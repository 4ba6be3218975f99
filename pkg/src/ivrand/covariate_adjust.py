"""Covariate adjustment by residualizing on baseline covariates.

Any inference routine can then be run on the residualized dataset. The
instrument is untouched, so randomization-based validity is preserved.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ivrand.core import IvDataset
from ivrand.errors import LengthMismatch, NonFiniteValue, RankDeficient, TooFewRows

__all__ = ["residualize", "adjusted_dataset"]

# column-pivot-free rank test on the R factor, relative to its largest diagonal
_RANK_RTOL = 1e-10


def _design(x, n: int) -> np.ndarray:
    xa = np.empty((n, 0)) if x is None else np.asarray(x, dtype=float)
    if xa.ndim == 1:
        xa = xa[:, None]
    if xa.ndim != 2:
        raise ValueError("covariates must be a vector or an n x p matrix")
    if xa.shape[0] != n:
        raise LengthMismatch(f"covariates have {xa.shape[0]} rows, expected {n}")
    if not np.all(np.isfinite(xa)):
        raise NonFiniteValue("covariates contain non-finite values")
    return np.column_stack([np.ones(n), xa])


def residualize(v: Sequence[float], x) -> np.ndarray:
    """Least-squares residuals of ``v`` on ``x`` plus an intercept.

    Parameters
    ----------
    v : sequence of float
        Response, length n.
    x : array_like
        n x p covariate matrix (a vector is one covariate; ``None`` or
        ``p = 0`` means intercept only).

    Returns
    -------
    numpy.ndarray
        ``v - X (X'X)^{-1} X' v`` computed from a thin QR factorisation.

    Raises
    ------
    TooFewRows
        If n <= p + 1.
    RankDeficient
        If the design with intercept does not have full column rank.
    """
    va = np.asarray(v, dtype=float)
    n = len(va)
    X = _design(x, n)
    if n <= X.shape[1]:
        raise TooFewRows(f"need more than {X.shape[1]} rows for {X.shape[1] - 1} covariates, got {n}")
    Q, R = np.linalg.qr(X, mode="reduced")
    diag = np.abs(np.diag(R))
    if diag.min() <= _RANK_RTOL * diag.max():
        raise RankDeficient("design matrix (with intercept) is rank deficient")
    resid = va - Q @ (Q.T @ va)
    # one refinement step cleans up the projection for ill-conditioned designs
    return resid - Q @ (Q.T @ resid)


def adjusted_dataset(ds: IvDataset, x, residualize_d: bool = False) -> IvDataset:
    """Dataset with the outcome (and optionally the treatment) replaced by residuals."""
    out = ds.with_outcome(residualize(ds.y, x))
    if residualize_d:
        out = out.with_treatment(residualize(ds.d, x))
    return out
