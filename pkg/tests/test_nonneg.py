import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import fisher_exact

from case2.errors import Infeasible, InvalidAllocation
from case2.nonneg import (
    TwoByTwo,
    allocations,
    fisher_p,
    fisher_point,
    nonneg_interval,
    stratified_worst_allocation,
    worst_allocation,
)


def _lg_tail(a, b, c, d):
    # independent evaluation with explicit log-gamma binomials
    def lc(n, k):
        return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
    N, r1, c1 = a + b + c + d, a + b, a + c
    return sum(math.exp(lc(r1, x) + lc(N - r1, c1 - x) - lc(N, c1))
               for x in range(a, min(r1, c1) + 1))


def test_unadjusted_matches_scipy():
    for t in [(3, 1, 1, 3), (10, 4, 2, 9), (0, 5, 5, 0), (247, 1118, 183, 2547)]:
        expected = fisher_exact([[t[0], t[1]], [t[2], t[3]]], alternative="greater")[1]
        assert fisher_p(TwoByTwo(*t)) == pytest.approx(expected, rel=1e-9)


def test_allocation_matches_log_gamma():
    assert fisher_p(TwoByTwo(3, 1, 1, 3), 0, (1, 0)) == pytest.approx(_lg_tail(3, 0, 1, 3), rel=1e-12)
    assert fisher_p(TwoByTwo(3, 1, 1, 3), 0, (1, 0)) == pytest.approx(4 / 35, rel=1e-12)
    assert fisher_p(TwoByTwo(3, 1, 1, 3), 0, (0, 1)) == pytest.approx(13 / 35, rel=1e-12)


def test_point_probability():
    assert fisher_point(TwoByTwo(3, 1, 1, 3)) == pytest.approx(16 / 70)


def test_invalid_allocation():
    with pytest.raises(InvalidAllocation):
        fisher_p(TwoByTwo(3, 1, 1, 3), 0, (2, 0))
    with pytest.raises(InvalidAllocation):
        fisher_p(TwoByTwo(3, 1, 1, 3), 4, (0, 0))
    with pytest.raises(Infeasible):
        allocations(TwoByTwo(3, 1, 1, 3), 5)


def test_worst_allocation_small():
    t = TwoByTwo(3, 1, 1, 3)
    assert worst_allocation(t, 0) == ((0, 0), fisher_p(t))
    alloc, p = worst_allocation(t, 1)
    assert p == max(fisher_p(t, 0, (1, 0)), fisher_p(t, 0, (0, 1)))


def test_all_controls_removed():
    t = TwoByTwo(4, 2, 1, 3)
    alloc, p = worst_allocation(t, 5)
    assert alloc == (2, 3) and p == 1.0


@settings(max_examples=60)
@given(st.integers(0, 6), st.integers(0, 6), st.integers(0, 6), st.integers(0, 6), st.data())
def test_max_covers_every_allocation(a, b, c, d, data):
    t = TwoByTwo(a, b, c, d)
    n = data.draw(st.integers(0, b + d))
    A = data.draw(st.integers(0, a))
    _, p_max = worst_allocation(t, n, A)
    for alloc in allocations(t, n):
        assert fisher_p(t, A, alloc) <= p_max


def test_interval_reduction_and_monotonicity():
    rng = np.random.default_rng(8)
    for _ in range(100):
        t = TwoByTwo(*map(int, rng.integers(0, 15, 4)))
        stars = [nonneg_interval(t, n)[0] for n in range(t.b + t.d + 1)]
        assert stars == sorted(stars, reverse=True)
        assert nonneg_interval(t, 0, 0.5)[0] >= nonneg_interval(t, 0, 0.05)[0]
        # n = 0: smallest A whose plain Fisher p exceeds alpha
        plain = next((A for A in range(t.a + 1) if fisher_p(t, A) > 0.05), t.a)
        assert stars[0] == plain


def test_stratified_single_stratum_agrees():
    t = TwoByTwo(5, 2, 3, 6)
    combo, p = stratified_worst_allocation([t], [2])
    alloc, p1 = worst_allocation(t, 2)
    assert p == pytest.approx(p1, rel=1e-12)


def test_stratified_exhaustive():
    tables = [TwoByTwo(3, 1, 1, 3), TwoByTwo(2, 2, 1, 4)]
    combo, p = stratified_worst_allocation(tables, [1, 2])
    opts = [allocations(t, n) for t, n in zip(tables, [1, 2])]
    from case2.nonneg import _stratified_p
    assert p == max(_stratified_p(tables, [0, 0], c) for c in itertools.product(*opts))
