import pytest
from hypothesis import given, strategies as st

from case2.errors import (
    EmptyInput,
    IncompatibleHypothesis,
    InvalidParameter,
    NarrowCountViolation,
    UnequalSetSizes,
)
from case2.model import (
    AttributionHypothesis,
    MultiplierMode,
    SensitivityParams,
    Unit,
    adjusted_kappa,
    interpret_params,
    study_from_arrays,
    validate_study,
)


def _units(spec):
    out = []
    for set_id, rows in spec.items():
        for k, (z, n) in enumerate(rows):
            out.append(Unit(set_id, 0, z, n, (), f"{set_id}-{k}"))
    return out


def test_three_sets_of_three(toy):
    assert (toy.I, toy.J) == (3, 3)
    assert all(s.l_plus == 1 and s.z_plus == 1 for s in toy.sets)


def test_two_narrow_units_rejected():
    with pytest.raises(NarrowCountViolation):
        validate_study(_units({"a": [(1, 1), (0, 1), (0, 0)]}))


def test_unequal_sizes_rejected():
    with pytest.raises(UnequalSetSizes):
        validate_study(_units({"a": [(1, 1), (0, 0)], "b": [(1, 1), (0, 0), (0, 0)]}))


def test_empty_rejected():
    with pytest.raises(EmptyInput):
        validate_study([])


def test_narrow_moved_to_front():
    study = validate_study(_units({"a": [(0, 0), (1, 0), (1, 1)]}))
    first = study.sets[0].units[0]
    assert first.narrow == 1 and first.unit_index == 1


def test_input_order_irrelevant():
    units = _units({"2": [(1, 1), (0, 0)], "10": [(0, 1), (1, 0)], "1": [(0, 1), (0, 0)]})
    assert validate_study(units) == validate_study(reversed(units))
    assert list(validate_study(units).set_ids) == ["1", "2", "10"]


def test_large_design():
    rows = [[1, 0, 0]] * 247 + [[0, 0, 0]] * (1365 - 247)
    study = study_from_arrays(rows)
    assert study.I == 1365 and study.J == 3
    assert sum(s.narrow_treated for s in study.sets) == 247


def test_params_must_be_at_least_one():
    for bad in ({"gamma": 0.5}, {"theta": 0.99}, {"delta": float("nan")}):
        with pytest.raises(InvalidParameter):
            SensitivityParams(**bad)


def test_multiplier_modes():
    p = SensitivityParams(2.0, 1.5, 1.2)
    assert p.multiplier == pytest.approx(2.0 * 1.5 * 1.2)
    q = SensitivityParams(2.0, 1.5, 1.2, MultiplierMode.AS_PRINTED)
    assert q.multiplier == pytest.approx(1.5**2 * 2.0)
    assert SensitivityParams(1, 1, 1, "printed").multiplier_mode is MultiplierMode.AS_PRINTED


def test_adjusted_kappa():
    study = study_from_arrays([[1, 0, 0], [0, 1, 0], [0, 0, 1]])
    assert adjusted_kappa(study, AttributionHypothesis()) == [1, 1, 1]
    assert adjusted_kappa(study, AttributionHypothesis({"1"})) == [0, 1, 1]
    with pytest.raises(IncompatibleHypothesis):
        adjusted_kappa(study, AttributionHypothesis({"2"}))
    with pytest.raises(IncompatibleHypothesis):
        adjusted_kappa(study, AttributionHypothesis({"nope"}))


@given(st.lists(st.lists(st.integers(0, 1), min_size=3, max_size=3), min_size=1, max_size=12),
       st.data())
def test_kappa_sums_to_I_minus_a(rows, data):
    study = study_from_arrays(rows)
    pool = [s.set_id for s in study.sets if s.narrow_treated]
    chosen = data.draw(st.lists(st.sampled_from(pool), unique=True) if pool else st.just([]))
    hyp = AttributionHypothesis(chosen)
    assert sum(adjusted_kappa(study, hyp)) == study.I - hyp.a


def test_interpretation_values():
    assert interpret_params(SensitivityParams(theta=1.10)).as_percent(0)[0] == 9.0
    assert interpret_params(SensitivityParams(theta=1.2)).as_percent(1)[0] == 16.7
    assert interpret_params(SensitivityParams()).as_percent() == (0.0, 0.0)


@given(st.floats(1, 50), st.floats(1, 50))
def test_interpretation_monotone(a, b):
    lo, hi = sorted((a, b))
    f = interpret_params(SensitivityParams(theta=lo, delta=lo))
    g = interpret_params(SensitivityParams(theta=hi, delta=hi))
    assert f.theta_fraction <= g.theta_fraction and f.delta_fraction <= g.delta_fraction
