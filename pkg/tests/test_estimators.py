import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ivrand.core import MomentSummary, validate_dataset
from ivrand.errors import DegenerateArm, ZeroFirstStage, ZeroVariance
from ivrand.estimators import diff_in_means, instrument_t_stat, moment_summary, wald_estimate


def test_diff_in_means_examples():
    assert diff_in_means([1, 2, 3, 4], [1, 1, 0, 0]) == -2.0
    assert diff_in_means([7, 7, 7, 7], [0, 1, 1, 0]) == 0.0
    z = [1, 0, 1, 0, 0]
    assert diff_in_means(z, z) == 1.0
    with pytest.raises(DegenerateArm):
        diff_in_means([1, 2], [1, 1])


def test_wald_examples(toy):
    assert wald_estimate(toy) == 2.0
    ds = validate_dataset([5, 1, 2, 2], [1, 1, 0, 0], [1, 1, 0, 0])
    assert wald_estimate(ds) == diff_in_means(ds.y, ds.z)
    with pytest.raises(ZeroFirstStage):
        wald_estimate(validate_dataset([5, 1, 2, 2], [1, 1, 1, 1], [1, 1, 0, 0]))


def test_moment_summary_hand_example(toy):
    ms = moment_summary(toy)
    assert ms.tauY_hat == 1.0 and ms.tauD_hat == 0.5
    assert ms.varY_hat == pytest.approx(1.0, abs=1e-15)
    assert ms.varD_hat == pytest.approx(0.25, abs=1e-15)
    assert ms.cov_hat == pytest.approx(0.5, abs=1e-15)


def test_moment_summary_degenerate_cases():
    ms = moment_summary(validate_dataset([2, 2, 2, 2], [1, 1, 1, 1], [1, 1, 0, 0]))
    assert ms.varY_hat == ms.varD_hat == ms.cov_hat == 0.0
    z = [1, 1, 0, 0, 1]
    ms = moment_summary(validate_dataset([1, 4, 2, 5, 3], z, z))
    assert ms.varD_hat == 0.0 and ms.cov_hat == 0.0
    with pytest.raises(DegenerateArm):
        moment_summary(validate_dataset([1, 2, 3, 4], [1, 0, 0, 0], [1, 0, 0, 0]))


def _loop_oracle(y, d, z):
    """Plain-loop two-sample moments."""
    out = {}
    for arm in (1, 0):
        ys = [yi for yi, zi in zip(y, z) if zi == arm]
        ds = [di for di, zi in zip(d, z) if zi == arm]
        m = len(ys)
        my, md = sum(ys) / m, sum(ds) / m
        out[arm] = (
            my, md,
            sum((v - my) ** 2 for v in ys) / (m - 1) / m,
            sum((v - md) ** 2 for v in ds) / (m - 1) / m,
            sum((a - my) * (b - md) for a, b in zip(ys, ds)) / (m - 1) / m,
        )
    t, c = out[1], out[0]
    return t[0] - c[0], t[1] - c[1], t[2] + c[2], t[3] + c[3], t[4] + c[4]


@given(st.integers(0, 10_000))
def test_moment_summary_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, 40))
    z = np.zeros(n)
    z[rng.choice(n, int(rng.integers(2, n - 1)), replace=False)] = 1
    d = (rng.random(n) < 0.5).astype(float)
    y = rng.normal(size=n) * 10 + 3
    ms = moment_summary(validate_dataset(y, d, z))
    ref = _loop_oracle(y, d, z)
    got = (ms.tauY_hat, ms.tauD_hat, ms.varY_hat, ms.varD_hat, ms.cov_hat)
    for g, r in zip(got, ref):
        assert g == pytest.approx(r, rel=1e-12, abs=1e-13)
    assert ms.cov_hat**2 <= ms.varY_hat * ms.varD_hat * (1 + 1e-12) + 1e-300


def test_instrument_t_examples():
    assert instrument_t_stat(MomentSummary(1.0, 0.0, 1.0, 0.1, 0.0)) == 0.0
    assert instrument_t_stat(MomentSummary(1.0, 0.5, 1.0, 0.0625, 0.0)) == 2.0
    assert instrument_t_stat(MomentSummary(1.0, 1.0, 1.0, 0.0, 0.0)) == math.inf
    with pytest.raises(ZeroVariance):
        instrument_t_stat(MomentSummary(1.0, 0.0, 1.0, 0.0, 0.0))
