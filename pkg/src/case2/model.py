"""Domain types for matched case-case studies and hypothesis adjustment."""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import (
    DuplicateUnit,
    EmptyInput,
    IncompatibleHypothesis,
    InvalidParameter,
    NarrowCountViolation,
    UnequalSetSizes,
)


@dataclass(frozen=True)
class Unit:
    set_id: str
    unit_index: int
    treated: int
    narrow: int
    covariates: tuple = ()
    unit_id: Optional[str] = None

    def __post_init__(self):
        if self.treated not in (0, 1) or self.narrow not in (0, 1):
            raise InvalidParameter("treated and narrow must be 0 or 1")

    def covariate(self, name):
        for key, value in self.covariates:
            if key == name:
                return value
        raise KeyError(name)


@dataclass(frozen=True)
class MatchedSet:
    """One narrow case followed by its J-1 marginal cases."""

    set_id: str
    units: tuple

    @property
    def size(self) -> int:
        return len(self.units)

    @property
    def z_plus(self) -> int:
        return sum(u.treated for u in self.units)

    @property
    def l_plus(self) -> int:
        return sum(u.narrow for u in self.units)

    @property
    def narrow_unit(self) -> Unit:
        return self.units[0]

    @property
    def narrow_treated(self) -> bool:
        return self.units[0].treated == 1


@dataclass(frozen=True)
class Study:
    sets: tuple
    J: int

    @property
    def I(self) -> int:
        return len(self.sets)

    @property
    def set_ids(self) -> list:
        return [s.set_id for s in self.sets]

    def units(self):
        for s in self.sets:
            yield from s.units


class MultiplierMode(enum.Enum):
    PROPOSITION_ONE = "prop1"
    AS_PRINTED = "printed"


@dataclass(frozen=True)
class SensitivityParams:
    gamma: float = 1.0
    theta: float = 1.0
    delta: float = 1.0
    multiplier_mode: MultiplierMode = MultiplierMode.PROPOSITION_ONE

    def __post_init__(self):
        for name in ("gamma", "theta", "delta"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value)) or value < 1:
                raise InvalidParameter(f"{name} must be ≥ 1")
        if not isinstance(self.multiplier_mode, MultiplierMode):
            object.__setattr__(self, "multiplier_mode", MultiplierMode(self.multiplier_mode))

    @property
    def multiplier(self) -> float:
        if self.multiplier_mode is MultiplierMode.AS_PRINTED:
            return self.theta**2 * self.gamma
        return self.theta * self.delta * self.gamma


@dataclass(frozen=True)
class AttributionHypothesis:
    """Sets whose treated narrow case is attributed to the treatment."""

    attributed: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not isinstance(self.attributed, frozenset):
            object.__setattr__(self, "attributed", frozenset(self.attributed))

    @property
    def a(self) -> int:
        return len(self.attributed)


@dataclass(frozen=True)
class ParamInterpretation:
    theta_fraction: float
    delta_fraction: float

    def as_percent(self, ndigits: int = 1) -> tuple:
        return (round(100 * self.theta_fraction, ndigits),
                round(100 * self.delta_fraction, ndigits))


def _set_sort_key(set_id: str):
    return (0, int(set_id), "") if set_id.lstrip("-").isdigit() else (1, 0, set_id)


def _unit_sort_key(unit: Unit):
    return (-unit.narrow, unit.unit_id or "", unit.treated, repr(unit.covariates))


def validate_study(records: Iterable[Unit]) -> Study:
    """Group units into matched sets and check the design constraints.

    Sets are ordered by ``set_id`` (numerically when all ids are integers) and
    the narrow unit is moved to position 1 of its set, so the result does not
    depend on input order.
    """
    records = list(records)
    if not records:
        raise EmptyInput("no units supplied")
    groups = defaultdict(list)
    for rec in records:
        groups[str(rec.set_id)].append(rec)

    sets = []
    sizes = set()
    for set_id in sorted(groups, key=_set_sort_key):
        members = groups[set_id]
        n_narrow = sum(u.narrow for u in members)
        if n_narrow != 1:
            raise NarrowCountViolation(
                f"set {set_id!r} has {n_narrow} narrow cases; exactly 1 required")
        ids = [u.unit_id for u in members if u.unit_id is not None]
        if len(ids) != len(set(ids)):
            raise DuplicateUnit(f"set {set_id!r} repeats a unit_id")
        ordered = sorted(members, key=_unit_sort_key)
        units = tuple(
            Unit(set_id, k + 1, u.treated, u.narrow, u.covariates, u.unit_id)
            for k, u in enumerate(ordered)
        )
        sizes.add(len(units))
        sets.append(MatchedSet(set_id, units))

    if len(sizes) != 1:
        raise UnequalSetSizes(f"set sizes differ: {sorted(sizes)}")
    J = sizes.pop()
    if J < 2:
        raise UnequalSetSizes("each set needs at least one marginal case (J ≥ 2)")
    all_ids = [u.unit_id for s in sets for u in s.units if u.unit_id is not None]
    if len(all_ids) != len(set(all_ids)):
        raise DuplicateUnit("a unit_id appears in more than one set")
    return Study(tuple(sets), J)


def adjusted_kappa(study: Study, hyp: AttributionHypothesis) -> list:
    """Narrow status under control, per set, implied by ``hyp``.

    Attributed sets lose their narrow case (0); every other set keeps it (1).
    """
    known = {s.set_id: s for s in study.sets}
    for set_id in hyp.attributed:
        s = known.get(set_id)
        if s is None:
            raise IncompatibleHypothesis(f"unknown set {set_id!r}")
        if not s.narrow_treated:
            raise IncompatibleHypothesis(
                f"set {set_id!r}: an untreated narrow case cannot be caused by treatment")
    return [0 if s.set_id in hyp.attributed else 1 for s in study.sets]


def interpret_params(params: SensitivityParams) -> ParamInterpretation:
    """Largest share of cases the treatment may move between subtypes."""
    return ParamInterpretation(1 - 1 / params.theta, 1 - 1 / params.delta)


def study_from_arrays(treated: Sequence[Sequence[int]]) -> Study:
    """Build a study from per-set treatment vectors (narrow unit first)."""
    units = []
    for i, z in enumerate(treated):
        for j, zj in enumerate(z):
            units.append(Unit(str(i + 1), j + 1, int(zj), int(j == 0)))
    return validate_study(units)
