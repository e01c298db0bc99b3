"""Sign-score test, per-set bounds and prediction intervals for the attributable effect.

The test statistic is the number of treated narrow cases. Under a compatible
hypothesis attributing ``a`` of them to the treatment, the remaining count is a
sum of independent Bernoulli variables whose success probabilities are bounded
set by set; the worst case is found by removing the ``a`` treated-narrow sets
with the smallest upper bound (asymptotic separability), and the tail of the
resulting Poisson-binomial law gives the upper bound on the p-value.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import binom

from .errors import DegenerateVariance, EmptyInput, InvalidParameter
from .model import SensitivityParams, Study
from .model import _set_sort_key as _id_key


EXPECTATION_TOL = 1e-9


class TailMethod(str, enum.Enum):
    EXACT = "exact"
    NORMAL = "normal"


@dataclass(frozen=True)
class PerSetBound:
    set_id: str
    lambda_bar: float
    lambda_barbar: float
    w_bar: float
    w_barbar: float

    @property
    def gap(self) -> float:
        return self.lambda_barbar - self.lambda_bar


@dataclass
class TestResult:
    statistic: int
    p_upper: float
    method: str
    a: int
    per_set: list = field(default_factory=list)
    flag: Optional[str] = None
    expectation: float = float("nan")
    variance: float = float("nan")
    attributed: tuple = ()

    def as_dict(self) -> dict:
        return {
            "a": self.a,
            "statistic": self.statistic,
            "p_upper": self.p_upper,
            "method": self.method,
            "flag": self.flag,
            "expectation": self.expectation,
            "variance": self.variance,
            "attributed": list(self.attributed),
            "per_set": [dict(asdict(b), gap=b.gap) for b in self.per_set],
        }


@dataclass(frozen=True)
class SweepRow:
    gamma: float
    theta: float
    delta: float
    alpha: float
    a_star: int
    p_at_a_star: float
    method: str

    def as_dict(self) -> dict:
        return asdict(self)


def sign_score(study: Study) -> int:
    """Number of matched sets whose narrow case is treated."""
    return sum(1 for s in study.sets if s.narrow_treated)


def per_set_upper(z_plus: int, kappa_c: int, J: int, params: SensitivityParams) -> float:
    m = params.multiplier
    zk = z_plus * kappa_c
    if zk == 0:
        return 0.0
    return m * zk / (m * zk + (J - zk))


def per_set_lower(z_plus: int, kappa_c: int, J: int, params: SensitivityParams) -> float:
    zk = z_plus * kappa_c
    if zk == 0:
        return 0.0
    return zk / (zk + (J - zk) * params.gamma)


def poisson_binomial_tail(probs: Sequence[float], k: int) -> float:
    """Exact P(sum of independent Bernoulli(p_i) >= k).

    Dynamic programming over the running count, truncated at ``k``: the last
    cell absorbs every outcome already at or above ``k``. Each update only
    adds nonnegative terms, so no cancellation occurs even for tails near
    machine epsilon. When the probabilities take few distinct values (the
    usual case for matched sets of one size) equal ones are grouped into
    binomial blocks and convolved under the same truncation.
    """
    if k <= 0:
        return 1.0
    p = np.asarray(probs, dtype=float)
    if p.size and (np.any(p < 0) or np.any(p > 1)):
        raise InvalidParameter("probabilities must lie in [0, 1]")
    if k > p.size:
        return 0.0
    values, counts = np.unique(p, return_counts=True)
    if 8 * len(values) <= p.size:
        return _grouped_tail(values, counts, k)
    dp = np.zeros(k + 1)
    dp[0] = 1.0
    for pi in p:
        if pi == 0.0:
            continue
        moved = dp[:-1] * pi
        dp[:-1] *= 1.0 - pi
        dp[1:] += moved
    return float(min(1.0, max(0.0, dp[k])))


def _grouped_tail(values, counts, k: int) -> float:
    dist = np.zeros(k + 1)
    dist[0] = 1.0
    for v, c in zip(values, counts):
        if v == 0.0:
            continue
        block = np.zeros(k + 1)
        top = min(int(c), k - 1)
        block[:top + 1] = binom.pmf(np.arange(top + 1), c, v)
        block[k] = binom.sf(k - 1, c, v)
        full = np.convolve(dist, block)
        dist = full[:k + 1]
        dist[k] = full[k:].sum()
    return float(min(1.0, max(0.0, dist[k])))


def _phi_upper(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def normal_tail(probs: Sequence[float], k: float) -> float:
    """Normal approximation to P(sum >= k), without continuity correction."""
    p = np.asarray(probs, dtype=float)
    mean = float(p.sum())
    var = float((p * (1 - p)).sum())
    if var <= 0:
        raise DegenerateVariance(
            f"variance is zero; the sum equals {mean} with certainty")
    return _phi_upper((k - mean) / math.sqrt(var))


def _tail(probs, k, method) -> float:
    if TailMethod(method) is TailMethod.EXACT:
        return poisson_binomial_tail(probs, k)
    try:
        return normal_tail(probs, k)
    except DegenerateVariance:
        return 1.0 if float(np.sum(probs)) >= k else 0.0


def set_bounds(study: Study, params: SensitivityParams) -> list:
    """Attributed/unattributed bounds for every set with a treated narrow case.

    With one narrow case per set the attributed bound is always 0.
    """
    m = params.multiplier
    J = study.J
    out = []
    for s in study.sets:
        if not s.narrow_treated:
            continue
        z, l = s.z_plus, s.l_plus
        bb = m * z * l / (m * z * l + (J - z * l))
        b = m * z * (l - 1) / (m * z * (l - 1) + (J - z * (l - 1)))
        out.append(PerSetBound(s.set_id, b, bb, b * (1 - b), bb * (1 - bb)))
    return out


class _Prepared:
    """Per-set bounds and attribution order for one (study, params) pair."""

    def __init__(self, study: Study, params: SensitivityParams):
        self.T = sign_score(study)
        self.bounds = set_bounds(study, params)
        by_id = {b.set_id: b for b in self.bounds}
        self.ids = [s.set_id for s in study.sets]
        self.base = np.array([
            by_id[s.set_id].lambda_barbar if s.narrow_treated
            else per_set_upper(s.z_plus, 1, study.J, params)
            for s in study.sets
        ])
        position = {sid: k for k, sid in enumerate(self.ids)}
        ranked = sorted(self.bounds, key=lambda b: (b.gap, _id_key(b.set_id)))
        self.order = [position[b.set_id] for b in ranked]
        self.attributed_value = {position[b.set_id]: b.lambda_bar for b in self.bounds}

    def result(self, a: int, method: str) -> TestResult:
        method = TailMethod(method).value
        if a < 0:
            raise InvalidParameter("a must be ≥ 0")
        if a >= self.T:
            return TestResult(self.T, 1.0, method, a, flag="certain")
        probs = self.base.copy()
        chosen = self.order[:a]
        for k in chosen:
            probs[k] = self.attributed_value[k]
        mean = float(probs.sum())
        var = float((probs * (1 - probs)).sum())
        attributed = tuple(self.ids[k] for k in sorted(chosen))
        result = TestResult(self.T, 1.0, method, a, self.bounds, None, mean, var, attributed)
        # tolerance absorbs rounding in sums like 1/3 + 2/3
        if a + mean >= self.T - EXPECTATION_TOL:
            result.flag = "plausible"
            return result
        result.p_upper = _tail(probs, self.T - a, method)
        return result


def worst_case_pvalue(study: Study, params: SensitivityParams, a: int,
                      method: str = "exact") -> TestResult:
    """Upper bound on the one-sided p-value for "at most ``a`` caused events"."""
    return _Prepared(study, params).result(a, method)


def prediction_interval(study: Study, params: SensitivityParams, alpha: float = 0.05,
                        method: str = "exact"):
    """Smallest ``a`` whose worst-case p-value exceeds ``alpha``.

    Returns ``(a_star, trace)`` where ``trace`` lists every ``(a, p)`` visited.
    The one-sided interval is ``{A : A >= a_star}``.
    """
    if not 0 < alpha < 1:
        raise InvalidParameter("alpha must lie in (0, 1)")
    prep = _Prepared(study, params)
    trace = []
    a = 0
    while True:
        p = prep.result(a, method).p_upper
        trace.append((a, p))
        if p > alpha:
            return a, trace
        a += 1


def _sweep_one(study, params, alpha, method):
    a_star, trace = prediction_interval(study, params, alpha, method)
    return SweepRow(float(params.gamma), float(params.theta), float(params.delta),
                    float(alpha), a_star, trace[-1][1], TailMethod(method).value)


def sweep(study: Study, grid: Sequence, alpha: float = 0.05, method: str = "exact",
          threads: int = 1) -> list:
    """One row per grid point, in grid order.

    Grid entries are :class:`SensitivityParams` or ``(params, alpha)`` pairs.
    """
    if not grid:
        raise EmptyInput("empty sensitivity grid")
    jobs = []
    for entry in grid:
        if isinstance(entry, SensitivityParams):
            jobs.append((entry, alpha))
        else:
            p, a = entry
            jobs.append((p, alpha if a is None else a))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_sweep_one, study, p, a, method) for p, a in jobs]
            return [f.result() for f in futures]
    return [_sweep_one(study, p, a, method) for p, a in jobs]


@dataclass(frozen=True)
class TwoByTwo:
    """Narrow/marginal by treated/untreated counts."""

    narrow_treated: int
    narrow_untreated: int
    marginal_treated: int
    marginal_untreated: int

    def as_dict(self) -> dict:
        return asdict(self)


def odds_ratio(n11, n12, n21, n22):
    """Cross-product ratio; Haldane +0.5 correction when a cell is zero."""
    if 0 in (n11, n12, n21, n22):
        n11, n12, n21, n22 = (x + 0.5 for x in (n11, n12, n21, n22))
        return n11 * n22 / (n12 * n21), True
    return n11 * n22 / (n12 * n21), False


def two_by_two_summary(pop) -> tuple:
    """Return ``(table, odds_ratio, zero_cell_flag)`` for a population.

    ``pop`` is a sequence of population records (or a study's units), or
    the four counts directly.
    """
    if len(pop) == 4 and all(isinstance(x, (int, np.integer)) for x in pop):
        table = TwoByTwo(*(int(x) for x in pop))
    else:
        if not pop:
            raise EmptyInput("empty population")
        counts = [0, 0, 0, 0]
        for r in pop:
            narrow = getattr(r, "narrow")
            counts[(0 if narrow else 2) + (0 if r.treated else 1)] += 1
        table = TwoByTwo(*counts)
    ratio, flagged = odds_ratio(table.narrow_treated, table.narrow_untreated,
                                table.marginal_treated, table.marginal_untreated)
    return table, ratio, flagged
