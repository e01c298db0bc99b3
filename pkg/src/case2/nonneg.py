"""Attributable-effect intervals when up to ``n`` units may violate non-negativity.

Units harmed by the treatment show up as cases under control, so they sit in
the control column of the 2x2 table (``b`` or ``d``). We do not know which
cells they occupy; every split ``b_i + d_i = n`` is tried and the largest
one-sided Fisher p-value is kept, which makes the resulting interval cover
the one obtained from the true (unknown) split.

Table layout::

                 treated   control
    response 1      a         b
    response 0      c         d
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidAllocation, Infeasible, InvalidParameter, TooLarge

MAX_COMBINATIONS = 10**6


@dataclass(frozen=True)
class TwoByTwo:
    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise InvalidParameter("2x2 counts must be nonnegative")

    @property
    def N(self) -> int:
        return self.a + self.b + self.c + self.d


def _log_choose(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _hypergeom_logpmf(x: int, total: int, rows1: int, cols1: int) -> float:
    return (_log_choose(rows1, x) + _log_choose(total - rows1, cols1 - x)
            - _log_choose(total, cols1))


def _adjusted(table: TwoByTwo, A: int, removal) -> tuple:
    b_i, d_i = removal
    if b_i < 0 or d_i < 0 or b_i > table.b or d_i > table.d:
        raise InvalidAllocation(f"cannot remove ({b_i}, {d_i}) from b={table.b}, d={table.d}")
    if not 0 <= A <= table.a:
        raise InvalidAllocation(f"A={A} must lie in 0..{table.a}")
    return table.a - A, table.b - b_i, table.c, table.d - d_i


def _support(a, b, c, d):
    total = a + b + c + d
    rows1, cols1 = a + b, a + c
    return total, rows1, cols1, max(0, cols1 - (total - rows1)), min(rows1, cols1)


def fisher_point(table: TwoByTwo, A: int = 0, removal=(0, 0)) -> float:
    """Hypergeometric probability of the adjusted table itself."""
    a, b, c, d = _adjusted(table, A, removal)
    total, rows1, cols1, _, _ = _support(a, b, c, d)
    return math.exp(_hypergeom_logpmf(a, total, rows1, cols1))


def fisher_p(table: TwoByTwo, A: int = 0, removal=(0, 0)) -> float:
    """One-sided Fisher p-value of the adjusted table.

    ``A`` treated cases are attributed to the treatment and ``removal =
    (b_i, d_i)`` violating units are taken out of the control column. The
    p-value sums hypergeometric probabilities of tables with at least as many
    treated cases, evaluated in log space.
    """
    a, b, c, d = _adjusted(table, A, removal)
    total, rows1, cols1, _, hi = _support(a, b, c, d)
    if total == 0:
        return 1.0
    logs = [_hypergeom_logpmf(x, total, rows1, cols1) for x in range(a, hi + 1)]
    top = max(logs)
    p = math.exp(top) * math.fsum(math.exp(v - top) for v in logs)
    return min(1.0, p)


def allocations(table: TwoByTwo, n: int) -> list:
    if n < 0:
        raise InvalidParameter("n must be ≥ 0")
    if n > table.b + table.d:
        raise Infeasible(f"n={n} exceeds the {table.b + table.d} control units")
    return [(b_i, n - b_i) for b_i in range(max(0, n - table.d), min(n, table.b) + 1)]


def worst_allocation(table: TwoByTwo, n: int, A: int = 0):
    """Split of the ``n`` violating units that maximizes the p-value.

    Ties go to the smaller ``b_i``.
    """
    best, best_p = None, -1.0
    for alloc in allocations(table, n):
        p = fisher_p(table, A, alloc)
        if p > best_p:
            best, best_p = alloc, p
    return best, best_p


def nonneg_interval(table: TwoByTwo, n: int, alpha: float = 0.05):
    """Smallest ``A`` whose worst-allocation p-value exceeds ``alpha``.

    Returns ``(a_star, trace)`` with the ``(A, allocation, p)`` path searched.
    """
    if not 0 < alpha < 1:
        raise InvalidParameter("alpha must lie in (0, 1)")
    allocations(table, n)
    trace = []
    for A in range(table.a + 1):
        alloc, p = worst_allocation(table, n, A)
        trace.append((A, alloc, p))
        if p > alpha:
            return A, trace
    return table.a, trace


def _stratified_p(tables, A_per, removals) -> float:
    # exact distribution of the summed treated-case counts across strata
    dist = np.array([1.0])
    observed = 0
    for t, A, rem in zip(tables, A_per, removals):
        a, b, c, d = _adjusted(t, A, rem)
        total, rows1, cols1, lo, hi = _support(a, b, c, d)
        observed += a
        if total == 0:
            continue
        pmf = np.zeros(hi + 1)
        for x in range(lo, hi + 1):
            pmf[x] = math.exp(_hypergeom_logpmf(x, total, rows1, cols1))
        dist = np.convolve(dist, pmf)
    return float(min(1.0, dist[observed:].sum()))


def stratified_worst_allocation(tables: Sequence[TwoByTwo], budgets: Sequence[int],
                                A_per: Sequence[int] = None):
    """Worst-case split of per-stratum violation budgets for a stratified test.

    Every combination of per-stratum allocations is enumerated (capped at one
    million) and the largest exact p-value of the summed treated-case count
    is returned with its allocations.
    """
    if len(tables) != len(budgets):
        raise InvalidParameter("one budget per table required")
    A_per = [0] * len(tables) if A_per is None else list(A_per)
    options = [allocations(t, n) for t, n in zip(tables, budgets)]
    if math.prod(len(o) for o in options) > MAX_COMBINATIONS:
        raise TooLarge("too many allocation combinations")
    best, best_p = None, -1.0
    for combo in itertools.product(*options):
        p = _stratified_p(tables, A_per, combo)
        if p > best_p:
            best, best_p = combo, p
    return list(best), best_p
