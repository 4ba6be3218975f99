import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from ivrand.normal import norm_ppf, z_crit


def test_z_crit_common_levels():
    assert z_crit(0.05) == pytest.approx(1.959963984540054, abs=1e-14)
    assert z_crit(0.01) == pytest.approx(2.5758293035489004, abs=1e-14)


@given(st.floats(1e-300, 1 - 1e-16, exclude_min=False))
def test_matches_scipy(p):
    ref = norm.ppf(p)
    assert norm_ppf(p) == pytest.approx(ref, rel=1e-13, abs=1e-13)


def test_symmetry_and_domain():
    assert norm_ppf(0.5) == 0.0
    assert norm_ppf(0.025) == pytest.approx(-norm_ppf(0.975), abs=1e-15)
    assert norm_ppf(0.0) == float("-inf") and norm_ppf(1.0) == float("inf")
    for bad in (-0.1, 1.5, float("nan")):
        with pytest.raises(ValueError):
            norm_ppf(bad)
    with pytest.raises(ValueError):
        z_crit(1.0)
