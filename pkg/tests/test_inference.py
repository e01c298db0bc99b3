import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from case2.errors import DegenerateVariance, EmptyInput, InvalidParameter
from case2.inference import (
    normal_tail,
    odds_ratio,
    per_set_lower,
    per_set_upper,
    poisson_binomial_tail,
    prediction_interval,
    set_bounds,
    sign_score,
    sweep,
    two_by_two_summary,
    worst_case_pvalue,
)
from case2.io import PopulationRecord
from case2.model import MultiplierMode, SensitivityParams, study_from_arrays
from case2.oracle import enumerate_tail, exhaustive_worst_case

from conftest import random_study

P1 = SensitivityParams()


def test_sign_score():
    assert sign_score(study_from_arrays([[1, 0, 0], [1, 1, 0], [0, 1, 0]])) == 2
    assert sign_score(study_from_arrays([[0, 0, 0]] * 4)) == 0


@pytest.mark.parametrize("z, params, expected", [
    (1, SensitivityParams(), 1 / 3),
    (1, SensitivityParams(gamma=2), 0.5),
    (1, SensitivityParams(theta=1.2, delta=1.2), 1.44 / 3.44),
    (0, SensitivityParams(gamma=3, theta=2, delta=2), 0.0),
])
def test_per_set_upper(z, params, expected):
    assert per_set_upper(z, 1, 3, params) == pytest.approx(expected, abs=1e-15)


def test_per_set_upper_printed_mode():
    p = SensitivityParams(1, 1.5, 1.1, MultiplierMode.AS_PRINTED)
    assert per_set_upper(1, 1, 3, p) == pytest.approx(2.25 / 4.25)


@pytest.mark.parametrize("params, expected", [
    (SensitivityParams(), 1 / 3),
    (SensitivityParams(gamma=2), 0.2),
    (SensitivityParams(gamma=2, theta=5, delta=5), 0.2),
])
def test_per_set_lower(params, expected):
    assert per_set_lower(1, 1, 3, params) == pytest.approx(expected, abs=1e-15)


@given(st.integers(2, 8), st.data(), st.floats(1, 5), st.floats(1, 5), st.floats(1, 5))
def test_lower_below_upper(J, data, g, t, d):
    z = data.draw(st.integers(0, J))
    p = SensitivityParams(g, t, d)
    lo, hi = per_set_lower(z, 1, J, p), per_set_upper(z, 1, J, p)
    assert lo <= hi + 1e-15
    if 0 < z < J and (g, t, d) != (1, 1, 1):
        assert lo < hi


def test_randomization_case_reduces_to_z_over_J():
    for J in range(2, 7):
        for z in range(J + 1):
            assert per_set_upper(z, 1, J, P1) == pytest.approx(z / J, abs=1e-15)


def test_tail_small_cases():
    assert poisson_binomial_tail([0.5, 0.5], 1) == 0.75
    assert poisson_binomial_tail([0.3, 0.9], 0) == 1.0
    assert poisson_binomial_tail([0.3], 2) == 0.0
    with pytest.raises(InvalidParameter):
        poisson_binomial_tail([1.2], 1)


def test_tail_matches_enumeration():
    rng = np.random.default_rng(11)
    p = rng.uniform(size=10)
    assert poisson_binomial_tail(p, 4) == pytest.approx(enumerate_tail(p, 4), abs=1e-12)


def test_grouped_tail_matches_enumeration():
    # few distinct values trigger the binomial-block path
    p = [0.2] * 6 + [0.7] * 5 + [0.0] * 3 + [1.0] * 2
    for k in range(len(p) + 2):
        assert poisson_binomial_tail(p, k) == pytest.approx(enumerate_tail(p, k), abs=1e-12)


def test_tail_far_in_the_tail_is_accurate():
    # P(all 60 succeed) for p = 0.1 is 1e-60; no cancellation allowed
    assert poisson_binomial_tail([0.1] * 60, 60) == pytest.approx(1e-60, rel=1e-9)


def test_normal_tail():
    p = [0.2, 0.5, 0.7]
    assert normal_tail(p, sum(p)) == pytest.approx(0.5)
    assert abs(normal_tail([0.3] * 1000, 330) - poisson_binomial_tail([0.3] * 1000, 330)) < 0.01
    with pytest.raises(DegenerateVariance):
        normal_tail([0.0, 0.0], 1)


def test_toy_pvalues(toy):
    assert worst_case_pvalue(toy, P1, 0).p_upper == pytest.approx(1 / 27, abs=1e-15)
    assert worst_case_pvalue(toy, P1, 1).p_upper == pytest.approx(1 / 9, abs=1e-15)
    r = worst_case_pvalue(toy, P1, 3)
    assert r.p_upper == 1.0 and r.flag == "certain"


def test_toy_interval(toy):
    a_star, trace = prediction_interval(toy, P1, 0.05)
    assert a_star == 1
    assert [a for a, _ in trace] == [0, 1]


def test_plausible_by_expectation():
    study = study_from_arrays([[1, 1, 1], [1, 1, 0], [0, 1, 0]])
    r = worst_case_pvalue(study, P1, 0)
    assert r.flag == "plausible" and r.p_upper == 1.0


def test_untreated_narrow_sets_keep_their_bound():
    study = study_from_arrays([[1, 0, 0], [0, 1, 0], [0, 0, 0]])
    r = worst_case_pvalue(study, P1, 0)
    assert r.expectation == pytest.approx(2 / 3)
    assert r.p_upper == pytest.approx(1 - (2 / 3) ** 2)


def test_attribution_order_is_deterministic():
    # gaps: z=1 -> 1/3, z=2 -> 2/3; smallest gaps first, then set order
    study = study_from_arrays([[1, 1, 0], [1, 0, 0], [1, 0, 0], [1, 1, 0]])
    assert worst_case_pvalue(study, P1, 2).attributed == ("2", "3")
    assert worst_case_pvalue(study, P1, 3).attributed == ("1", "2", "3")


def test_per_set_bounds_reported(toy):
    bounds = set_bounds(toy, SensitivityParams(gamma=2))
    assert [b.lambda_bar for b in bounds] == [0.0] * 3
    assert bounds[0].lambda_barbar == pytest.approx(0.5)
    assert bounds[0].w_barbar == pytest.approx(0.25)


def test_bad_inputs(toy):
    with pytest.raises(InvalidParameter):
        worst_case_pvalue(toy, P1, -1)
    with pytest.raises(InvalidParameter):
        prediction_interval(toy, P1, 1.5)
    with pytest.raises(ValueError):
        worst_case_pvalue(toy, P1, 0, "bogus")


def test_p_nondecreasing_in_a():
    rng = np.random.default_rng(5)
    for _ in range(60):
        study = random_study(rng, int(rng.integers(1, 25)), int(rng.integers(2, 5)))
        params = SensitivityParams(*rng.uniform(1, 2.5, 3))
        T = sign_score(study)
        ps = [worst_case_pvalue(study, params, a).p_upper for a in range(T + 1)]
        assert all(x <= y + 1e-15 for x, y in zip(ps, ps[1:]))


def test_a_star_nonincreasing_in_each_parameter():
    rng = np.random.default_rng(9)
    for _ in range(15):
        study = random_study(rng, 60, 3)
        base = rng.uniform(1, 1.5, 3)
        for axis in range(3):
            stars = []
            for bump in (0.0, 0.3, 0.8, 1.5):
                v = base.copy()
                v[axis] += bump
                stars.append(prediction_interval(study, SensitivityParams(*v))[0])
            assert stars == sorted(stars, reverse=True)


def test_homogeneous_equals_exhaustive():
    rng = np.random.default_rng(3)
    for _ in range(40):
        study = random_study(rng, int(rng.integers(2, 10)), int(rng.integers(2, 5)),
                             homogeneous=True)
        params = SensitivityParams(*rng.uniform(1, 2, 3))
        for a in range(sign_score(study) + 1):
            assert worst_case_pvalue(study, params, a).p_upper == pytest.approx(
                exhaustive_worst_case(study, params, a), abs=1e-14)


def test_separability_never_exceeds_exhaustive():
    rng = np.random.default_rng(4)
    for _ in range(40):
        study = random_study(rng, int(rng.integers(2, 10)), int(rng.integers(2, 5)))
        params = SensitivityParams(*rng.uniform(1, 2, 3))
        for a in range(sign_score(study) + 1):
            assert (worst_case_pvalue(study, params, a).p_upper
                    <= exhaustive_worst_case(study, params, a) + 1e-14)


def test_sweep_rows():
    rng = np.random.default_rng(2)
    study = random_study(rng, 80, 3)
    grid = [SensitivityParams(gamma=g) for g in (1, 1.5, 2)]
    rows = sweep(study, grid)
    stars = [r.a_star for r in rows]
    assert stars == sorted(stars, reverse=True)
    single = sweep(study, grid[:1])[0]
    assert single.a_star == prediction_interval(study, grid[0])[0]
    assert sweep(study, [grid[1], grid[1]])[0] == sweep(study, [grid[1], grid[1]])[1]
    assert sweep(study, grid, threads=3) == rows
    assert sweep(study, [(grid[0], 0.5)])[0].alpha == 0.5
    with pytest.raises(EmptyInput):
        sweep(study, [])


def test_odds_ratio_table3():
    table, ratio, flagged = two_by_two_summary((247, 1118, 183, 2547))
    assert round(ratio, 2) == 3.07 and not flagged
    assert ratio == pytest.approx(247 * 2547 / (1118 * 183))
    assert table.narrow_treated == 247


def test_odds_ratio_edge_cases():
    assert odds_ratio(5, 5, 5, 5) == (1.0, False)
    ratio, flagged = odds_ratio(0, 5, 5, 5)
    assert flagged and ratio == pytest.approx(0.5 * 5.5 / (5.5 * 5.5))


def test_summary_from_records():
    recs = [PopulationRecord(str(k), ct, z) for k, (ct, z) in enumerate(
        [("narrow", 1), ("narrow", 0), ("marginal", 1), ("marginal", 0), ("marginal", 0)])]
    table, ratio, _ = two_by_two_summary(recs)
    assert (table.narrow_treated, table.narrow_untreated,
            table.marginal_treated, table.marginal_untreated) == (1, 1, 1, 2)
    assert ratio == 2.0
