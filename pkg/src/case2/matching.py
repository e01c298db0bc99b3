"""Optimal 1:k matching of narrow to marginal cases.

Units are first split into exact strata, then within each stratum every
narrow case receives ``ratio`` marginal cases so that the summed rank-based
Mahalanobis distance is minimal.
"""

from __future__ import annotations

import logging
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.stats import rankdata

from .errors import (
    EmptyInput,
    InfeasibleStratum,
    InvalidParameter,
    NonNumericCovariate,
)
from .io import PopulationRecord
from .model import Study, Unit, validate_study

log = logging.getLogger(__name__)

FORBIDDEN = 1e12


@dataclass(frozen=True)
class MatchSpec:
    ratio: int = 2
    exact_on: tuple = ()
    distance_covariates: tuple = ()
    caliper: Optional[float] = None

    def __post_init__(self):
        if self.ratio < 1:
            raise InvalidParameter("ratio must be ≥ 1")


@dataclass
class MatchResult:
    assignments: dict
    total_distance: float
    unmatched: list = field(default_factory=list)


def _design_matrix(pop: Sequence[PopulationRecord], covariates: Sequence[str]):
    """Numeric columns for the distance; categorical columns become indicators."""
    columns, names = [], []
    for name in covariates:
        values = [r.covariates.get(name) for r in pop]
        if any(v is None for v in values):
            raise NonNumericCovariate(f"covariate {name!r} has missing numeric values")
        if all(isinstance(v, (int, float)) for v in values):
            columns.append(np.asarray(values, dtype=float))
            names.append(name)
            continue
        if any(isinstance(v, (int, float)) for v in values):
            raise NonNumericCovariate(f"covariate {name!r} mixes numbers and labels")
        levels = sorted(set(values))
        for level in levels[1:] if len(levels) > 1 else levels:
            columns.append(np.asarray([v == level for v in values], dtype=float))
            names.append(f"{name}={level}")
    if not columns:
        raise InvalidParameter("no distance covariates given")
    return np.column_stack(columns), names


def rank_mahalanobis_matrix(X: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Squared rank-based Mahalanobis distances between ``rows`` and ``cols`` of ``X``.

    Columns are replaced by average ranks; the rank covariance is rescaled so
    each diagonal entry equals the variance of untied ranks 1..n.
    """
    n = X.shape[0]
    if n < 2:
        raise EmptyInput("need at least two units")
    R = np.column_stack([rankdata(X[:, k]) for k in range(X.shape[1])])
    cv = np.atleast_2d(np.cov(R, rowvar=False))
    untied = np.var(np.arange(1, n + 1), ddof=1)
    diag = np.diag(cv).copy()
    diag[diag == 0] = untied
    scale = np.sqrt(untied / diag)
    cv = cv * np.outer(scale, scale)
    try:
        if np.linalg.cond(cv) > 1e12:
            raise np.linalg.LinAlgError
        icov = np.linalg.inv(cv)
    except np.linalg.LinAlgError:
        warnings.warn("rank covariance is singular; using the pseudo-inverse",
                      stacklevel=2)
        icov = np.linalg.pinv(cv)
    # whiten with a square root of the (pseudo-)inverse, then squared Euclidean
    evals, evecs = np.linalg.eigh((icov + icov.T) / 2)
    W = R @ (evecs * np.sqrt(np.clip(evals, 0, None)))
    out = cdist(W[rows], W[cols], "sqeuclidean")
    return np.maximum(out, 0.0)


def robust_mahalanobis(pop: Sequence[PopulationRecord], covariates: Sequence[str]) -> np.ndarray:
    """Narrow-by-marginal distance matrix (population order within each role)."""
    X, _ = _design_matrix(pop, covariates)
    narrow = np.array([k for k, r in enumerate(pop) if r.case_type == "narrow"], dtype=int)
    marginal = np.array([k for k, r in enumerate(pop) if r.case_type == "marginal"], dtype=int)
    return rank_mahalanobis_matrix(X, narrow, marginal)


def _solve_block(D: np.ndarray, ratio: int):
    # one row per (narrow unit, slot); each marginal column used at most once
    expanded = np.repeat(D, ratio, axis=0)
    rows, cols = linear_sum_assignment(expanded)
    out = defaultdict(list)
    for r, c in zip(rows, cols):
        out[r // ratio].append(int(c))
    return out


def optimal_match(distances: np.ndarray, narrow_strata: Sequence, marginal_strata: Sequence,
                  spec: MatchSpec, narrow_ids: Sequence = None,
                  marginal_ids: Sequence = None) -> MatchResult:
    """Minimum-total-distance 1:``ratio`` assignment within exact strata."""
    D = np.asarray(distances, dtype=float)
    n_n, n_m = D.shape
    narrow_ids = list(range(n_n)) if narrow_ids is None else list(narrow_ids)
    marginal_ids = list(range(n_m)) if marginal_ids is None else list(marginal_ids)
    by_stratum_n, by_stratum_m = defaultdict(list), defaultdict(list)
    for k, s in enumerate(narrow_strata):
        by_stratum_n[s].append(k)
    for k, s in enumerate(marginal_strata):
        by_stratum_m[s].append(k)

    assignments, unmatched, total = {}, [], 0.0
    for stratum in sorted(by_stratum_n, key=repr):
        rows = by_stratum_n[stratum]
        cols = by_stratum_m.get(stratum, [])
        if len(cols) < spec.ratio * len(rows):
            raise InfeasibleStratum(stratum, len(rows), len(cols), spec.ratio)
        block = D[np.ix_(rows, cols)]
        if spec.caliper is not None:
            block = np.where(block > spec.caliper, FORBIDDEN, block)
        for r, picked in sorted(_solve_block(block, spec.ratio).items()):
            if spec.caliper is not None and any(block[r, c] >= FORBIDDEN for c in picked):
                unmatched.append(narrow_ids[rows[r]])
                continue
            chosen = sorted(cols[c] for c in picked)
            assignments[narrow_ids[rows[r]]] = [marginal_ids[c] for c in chosen]
            total += float(sum(D[rows[r], c] for c in chosen))
    return MatchResult(assignments, total, unmatched)


def _stratum_label(record: PopulationRecord, exact_on: Sequence[str]):
    return tuple(record.covariates.get(name) for name in exact_on)


def match_population(pop: Sequence[PopulationRecord], spec: MatchSpec) -> MatchResult:
    if not pop:
        raise EmptyInput("empty population")
    covs = spec.distance_covariates or tuple(
        k for k in pop[0].covariates if k not in spec.exact_on)
    D = robust_mahalanobis(pop, covs)
    narrow = [r for r in pop if r.case_type == "narrow"]
    marginal = [r for r in pop if r.case_type == "marginal"]
    return optimal_match(
        D,
        [_stratum_label(r, spec.exact_on) for r in narrow],
        [_stratum_label(r, spec.exact_on) for r in marginal],
        spec,
        [r.unit_id for r in narrow],
        [r.unit_id for r in marginal],
    )


def matched_study(pop: Sequence[PopulationRecord], result: MatchResult) -> Study:
    """Turn a match into a study; set ids follow the narrow units' file order."""
    by_id = {r.unit_id: r for r in pop}
    units = []
    k = 0
    for r in pop:
        if r.unit_id not in result.assignments:
            continue
        k += 1
        set_id = str(k)
        for uid in [r.unit_id] + list(result.assignments[r.unit_id]):
            rec = by_id[uid]
            units.append(Unit(set_id, 0, rec.treated, rec.narrow,
                              tuple(rec.covariates.items()), rec.unit_id))
    return validate_study(units)


@dataclass(frozen=True)
class BalanceRow:
    covariate: str
    smd: float
    mean_narrow: float
    mean_marginal: float
    flagged: bool = False


def standardized_difference(x_narrow: np.ndarray, x_marginal: np.ndarray):
    """(mean difference / SD of the combined matched sample, flagged)."""
    x_narrow, x_marginal = np.asarray(x_narrow, float), np.asarray(x_marginal, float)
    m1, m0 = float(np.mean(x_narrow)), float(np.mean(x_marginal))
    both = np.concatenate([x_narrow, x_marginal])
    sd = float(np.std(both, ddof=1)) if both.size > 1 else 0.0
    if sd == 0:
        if m1 == m0:
            return 0.0, False
        return float(np.inf) if m1 > m0 else float(-np.inf), True
    return (m1 - m0) / sd, False


def balance_table(pop: Sequence[PopulationRecord], result: MatchResult,
                  covariates: Sequence[str] = None) -> list:
    """Standardized mean differences over the matched units.

    Categorical covariates are expanded to one indicator per level.
    """
    if not result.assignments:
        raise EmptyInput("no matched sets")
    by_id = {r.unit_id: r for r in pop}
    narrow = [by_id[k] for k in result.assignments]
    marginal = [by_id[m] for ms in result.assignments.values() for m in ms]
    covariates = list(covariates or pop[0].covariates)
    rows = []
    for name in covariates:
        values = [r.covariates.get(name) for r in narrow + marginal]
        numeric = all(isinstance(v, (int, float)) and v is not None for v in values)
        if numeric:
            features = [(name, lambda r, n=name: float(r.covariates[n]))]
        else:
            levels = sorted({str(v) for v in values})
            features = [(f"{name}={lev}", lambda r, n=name, lev=lev: float(str(r.covariates.get(n)) == lev))
                        for lev in levels]
        for label, fn in features:
            xn = np.array([fn(r) for r in narrow])
            xm = np.array([fn(r) for r in marginal])
            smd, flagged = standardized_difference(xn, xm)
            if flagged:
                log.warning("zero variance for %s; SMD reported as %s", label, smd)
            rows.append(BalanceRow(label, smd, float(xn.mean()), float(xm.mean()), flagged))
    return rows
