import itertools
import math

import numpy as np
import pytest

from ivrand.core import validate_dataset
from ivrand.errors import EnumerationTooLarge, GridTooCoarse
from ivrand.estimators import diff_in_means
from ivrand.exact import (
    StudentizedNull,
    adjusted_responses,
    default_bracket,
    exact_ci,
    permutation_pvalue,
    studentized_statistic,
)
from ivrand.inversion import GridSpec, invert_test
from ivrand.permutation import PermutationEngine
from ivrand.sim_harness import SimulationConfig, generate_onesided

from conftest import random_dataset

ENUM = PermutationEngine(mode="enumerate")


def brute_pvalue(ds, tau0):
    """Loop over every assignment with the same n1."""
    q = ds.y - tau0 * ds.d

    def ratio(z):
        T, S = studentized_statistic(q, z)
        if S == 0.0:
            return 0.0 if T == 0.0 else math.inf
        return abs(T / S)

    obs = ratio(ds.z)
    hits = total = 0
    for idx in itertools.combinations(range(ds.n), ds.n1):
        z = np.zeros(ds.n)
        z[list(idx)] = 1.0
        r = ratio(z)
        total += 1
        hits += r >= obs - 1e-9 * max(1.0, obs)
    return hits / total


def test_adjusted_responses_examples(toy):
    assert np.array_equal(adjusted_responses(toy, 0.0), toy.y)
    ds = validate_dataset([2, 1, 4, 0], [1, 0, 1, 1], [1, 0, 1, 0])
    assert adjusted_responses(ds, 2.0)[:2].tolist() == [0.0, 1.0]
    ds = validate_dataset([1, 0, 1, 1], [1, 0, 1, 1], [1, 0, 1, 0])
    assert not adjusted_responses(ds, 1.0).any()


def test_studentized_statistic_examples(toy):
    assert studentized_statistic([2, 2, 2, 2], [1, 1, 0, 0]) == (0.0, 0.0)
    assert studentized_statistic([3, 1, 1, 1], [1, 1, 0, 0]) == (1.0, 1.0)
    T, _ = studentized_statistic(toy.y, toy.z)
    assert T == diff_in_means(toy.y, toy.z)


def test_constant_q_gives_p_one():
    ds = validate_dataset([2, 2, 2, 2, 2], [0, 1, 0, 1, 0], [1, 1, 0, 0, 0])
    assert permutation_pvalue(ds, 0.0, ENUM).p_value == 1.0


def test_four_unit_example_by_hand():
    # y = [3,1,1,1]: every split puts the 3 with a 1, so |T/S| = 1 for all six
    # assignments and every one ties the observed value
    z = [1, 1, 0, 0]
    ds = validate_dataset([3, 1, 1, 1], z, z)
    res = permutation_pvalue(ds, 0.0, ENUM)
    assert res.n_draws == 6
    assert res.p_value == brute_pvalue(ds, 0.0) == 1.0


@pytest.mark.parametrize("seed", range(20))
def test_enumeration_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 11))
    n1 = int(rng.integers(2, n - 1))
    z = np.zeros(n)
    z[rng.choice(n, n1, replace=False)] = 1
    d = (rng.random(n) < 0.6).astype(float)
    y = np.round(rng.normal(size=n) * 2, 1 if seed % 2 else 6)
    ds = validate_dataset(y, d, z)
    null = StudentizedNull(ds, ENUM)
    for tau0 in (0.0, 1.0, -2.5):
        assert null.pvalue(tau0) == pytest.approx(brute_pvalue(ds, tau0), abs=1e-12)


def test_monte_carlo_formula_and_determinism():
    ds = random_dataset(np.random.default_rng(1), n=40)
    eng = PermutationEngine(mode="monte_carlo", draws=2000, seed=5, chunk_size=300)
    p1 = permutation_pvalue(ds, 0.3, eng)
    p2 = permutation_pvalue(ds, 0.3, PermutationEngine(mode="monte_carlo", draws=2000, seed=5, chunk_size=300, workers=4))
    assert p1 == p2
    hits = round(p1.p_value * 2001 - 1)
    assert p1.p_value == pytest.approx((1 + hits) / 2001)
    p3 = permutation_pvalue(ds, 0.3, PermutationEngine(mode="monte_carlo", draws=2000, seed=6, chunk_size=300))
    assert p3.p_value != p1.p_value or p3.t_obs == p1.t_obs


def test_enumeration_cap():
    ds = random_dataset(np.random.default_rng(1), n=40)
    with pytest.raises(EnumerationTooLarge):
        permutation_pvalue(ds, 0.0, PermutationEngine(mode="enumerate", enumeration_cap=1000))
    assert PermutationEngine(enumeration_cap=1000).resolve(40, 20) == "monte_carlo"
    assert PermutationEngine().resolve(10, 5) == "enumerate"


def test_engine_validation():
    for kwargs in ({"draws": 10}, {"seed": -1}, {"mode": "bogus"}, {"workers": 0}):
        with pytest.raises(ValueError):
            PermutationEngine(**kwargs)


def test_limit_pvalue_matches_far_tau():
    rng = np.random.default_rng(4)
    for _ in range(5):
        ds = random_dataset(rng, n=12, pi=0.4)
        null = StudentizedNull(ds, ENUM)
        for sign in (-1.0, 1.0):
            assert null.limit_pvalue(sign) == pytest.approx(null.pvalue(sign * 1e7), abs=1e-12)


def test_constant_treatment_gives_full_line_or_empty():
    ds = validate_dataset([1.0, 2.5, 0.3, 1.1, 0.9, 2.0], [0] * 6, [1, 1, 1, 0, 0, 0])
    r = exact_ci(ds, 0.05, ENUM)
    assert r.interval.kind == "full_line"
    ds = validate_dataset([10, 11, 12, 13, 0, 1, 2, 3], [1] * 8, [1, 1, 1, 1, 0, 0, 0, 0])
    assert exact_ci(ds, 0.05, ENUM).interval.kind == "empty"


def test_exact_set_matches_pvalue_grid():
    rng = np.random.default_rng(9)
    ds = random_dataset(rng, n=14, pi=0.8, tau=1.0)
    r = exact_ci(ds, 0.05, ENUM)
    null = StudentizedNull(ds, ENUM)
    assert r.interval.kind == "bounded"
    lo, hi = r.interval.lo, r.interval.hi
    width = hi - lo
    xs = np.linspace(lo - width, hi + width, 801)
    for x in xs:
        if lo + 1e-6 * width < x < hi - 1e-6 * width:
            continue  # interior may hold rejected gaps only if the set were non-convex
        if x < lo - 1e-6 * width or x > hi + 1e-6 * width:
            assert null.pvalue(float(x)) < 0.05
    assert null.pvalue(lo) >= 0.05 and null.pvalue(hi) >= 0.05


def test_exact_coverage_small_n():
    # the sharp null holds at the true effect, so coverage is at least 1 - alpha
    cfg = SimulationConfig(n=20, replications=100)
    covered = 0
    reps = 120
    for rep in range(reps):
        ds = generate_onesided(cfg, 0.6, [11, rep])
        covered += StudentizedNull(ds, ENUM).pvalue(1.0) >= 0.05
    assert covered / reps >= 0.95 - 2 * math.sqrt(0.05 * 0.95 / reps)


def test_default_bracket_contains_estimate():
    ds = random_dataset(np.random.default_rng(3), n=30)
    lo, hi = default_bracket(ds)
    assert lo < (ds.y[ds.z == 1].mean() - ds.y[ds.z == 0].mean()) / (ds.d[ds.z == 1].mean() - ds.d[ds.z == 0].mean()) < hi


def test_invert_test_shapes():
    grid = GridSpec()
    out = invert_test(lambda x: 1.0 if abs(x) <= 1 else 0.0, 0.05, (-5, 5), grid, False)
    assert out.interval.kind == "bounded"
    assert out.interval.lo == pytest.approx(-1, abs=1e-5) and out.interval.hi == pytest.approx(1, abs=1e-5)
    out = invert_test(lambda x: 1.0 if abs(x) >= 1 else 0.0, 0.05, (-5, 5), grid, True)
    assert out.interval.kind == "two_rays"
    out = invert_test(lambda x: 1.0 if x >= 2 else 0.0, 0.05, (-5, 5), grid, (False, True))
    assert out.interval.kind == "right_ray" and out.interval.lo == pytest.approx(2, abs=1e-5)
    out = invert_test(lambda x: 1.0 if (abs(x) <= 1 or 3 <= x <= 4) else 0.0, 0.05, (-5, 5), grid, False)
    assert not out.convex and out.interval.hi == pytest.approx(4, abs=1e-5)


def test_invert_test_expands_bracket_and_gives_up():
    # the right edge starts inside the retained set, so the bracket must grow
    out = invert_test(lambda x: 1.0 if 440 <= x <= 460 else 0.0, 0.05, (400, 450), GridSpec(), False)
    assert out.interval.lo == pytest.approx(440, abs=1e-3)
    assert out.interval.hi == pytest.approx(460, abs=1e-3)
    assert out.bracket[1] > 460
    with pytest.raises(GridTooCoarse):
        invert_test(lambda x: 0.0, 0.05, (-1, 1), GridSpec(max_expansions=2), True)


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(coarse_points=10)
    with pytest.raises(ValueError):
        GridSpec(lo=1.0)
