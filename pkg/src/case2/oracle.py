"""Brute-force references for the approximations in :mod:`case2.inference`.

Everything here is exponential in the problem size on purpose; use only on
small inputs (J <= 6 units per set, I <= 20 sets).
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, TooLarge
from .model import SensitivityParams, Study

MAX_UNITS = 6
MAX_SETS = 20
MAX_ATTRIBUTIONS = 10**6


@dataclass(frozen=True)
class ConditionalConfig:
    """One matched set under the sensitivity model; unit 0 is the narrow case."""

    J: int
    z_plus: int
    u: tuple
    theta_T: tuple
    theta_C: tuple
    gamma: float = 1.0
    alpha_z: float = 0.0

    def treatment_probs(self) -> np.ndarray:
        eta = self.alpha_z + math.log(self.gamma) * np.asarray(self.u, dtype=float)
        return 1.0 / (1.0 + np.exp(-eta))


def _unit_odds(cfg: ConditionalConfig) -> np.ndarray:
    """Odds of treatment for each unit given its observed case type."""
    if len(cfg.u) != cfg.J or len(cfg.theta_T) != cfg.J or len(cfg.theta_C) != cfg.J:
        raise DomainError("u, theta_T and theta_C must have length J")
    tT = np.asarray(cfg.theta_T, dtype=float)
    tC = np.asarray(cfg.theta_C, dtype=float)
    if np.any((tT <= 0) | (tT >= 1) | (tC <= 0) | (tC >= 1)):
        raise DomainError("theta_T and theta_C must lie in (0, 1)")
    u = np.asarray(cfg.u, dtype=float)
    if np.any((u < 0) | (u > 1)):
        raise DomainError("u must lie in [0, 1]")
    pi = cfg.treatment_probs()
    if np.any((pi <= 0) | (pi >= 1)):
        raise DomainError("treatment probabilities must lie in (0, 1)")
    odds = np.empty(cfg.J)
    # narrow unit: treated & narrow vs untreated & narrow
    odds[0] = pi[0] * tT[0] / ((1 - pi[0]) * tC[0])
    # marginal units: treated & marginal vs untreated & marginal
    odds[1:] = pi[1:] * (1 - tT[1:]) / ((1 - pi[1:]) * (1 - tC[1:]))
    return odds


def elementary_symmetric(w: Sequence[float]) -> np.ndarray:
    """All elementary symmetric polynomials e_0..e_n of ``w``.

    Built one variable at a time, e_b <- e_b + w_k e_{b-1}; for positive
    inputs every step adds positive terms.
    """
    e = np.zeros(len(w) + 1)
    e[0] = 1.0
    for k, wk in enumerate(w, start=1):
        e[1:k + 1] = e[1:k + 1] + wk * e[0:k]
    return e


def _prob_by_enumeration(cfg: ConditionalConfig) -> float:
    odds = _unit_odds(cfg)
    q = odds / (1 + odds)
    J, z = cfg.J, cfg.z_plus
    num = den = 0.0
    for treated in itertools.combinations(range(J), z):
        mass = 1.0
        chosen = set(treated)
        for j in range(J):
            mass *= q[j] if j in chosen else 1 - q[j]
        den += mass
        if 0 in chosen:
            num += mass
    return num / den


def _prob_by_symmetric(cfg: ConditionalConfig) -> float:
    odds = _unit_odds(cfg)
    e = elementary_symmetric(odds[1:])
    z = cfg.z_plus
    top = odds[0] * e[z - 1]
    return top / (top + e[z])


def exact_conditional_prob(cfg: ConditionalConfig, check: bool = True) -> float:
    """P(narrow case treated | set composition, z_plus treated units).

    Computed by enumerating all treatment vectors with the given total and,
    independently, through elementary symmetric polynomials of the per-unit
    treatment odds. With ``check`` the two must agree to 1e-12.
    """
    if cfg.J > MAX_UNITS:
        raise TooLarge(f"J={cfg.J} exceeds {MAX_UNITS}")
    if not 0 <= cfg.z_plus <= cfg.J:
        raise DomainError("z_plus must lie in 0..J")
    if cfg.z_plus == 0:
        return 0.0
    if cfg.z_plus == cfg.J:
        return 1.0
    via_esp = _prob_by_symmetric(cfg)
    if check:
        via_enum = _prob_by_enumeration(cfg)
        if abs(via_esp - via_enum) > 1e-12:
            raise AssertionError(f"enumeration {via_enum!r} != symmetric {via_esp!r}")
    return float(via_esp)


def bound_interval(J: int, z_plus: int, params: SensitivityParams):
    """Closed-form lower/upper bounds on P(C_i = 1) for a set with z_plus treated."""
    if z_plus == 0:
        return 0.0, 0.0
    m = params.multiplier
    low = z_plus / (z_plus + (J - z_plus) * params.gamma)
    high = z_plus * m / (z_plus * m + (J - z_plus))
    return low, high


def draw_config(rng: np.random.Generator, J: int, gamma: float, theta: float,
                delta: float) -> ConditionalConfig:
    """Random configuration satisfying the sensitivity model constraints."""
    u = rng.uniform(0, 1, J)
    alpha_z = rng.uniform(-2, 2)
    tC = rng.uniform(0.05, 0.95, J)
    hi = np.minimum(theta * tC, 1 - (1 - tC) / delta)
    tT = tC + rng.uniform(0, 1, J) * (hi - tC)
    tT = np.clip(tT, tC, hi)
    z = int(rng.integers(1, J))
    return ConditionalConfig(J, z, tuple(u), tuple(tT), tuple(tC), gamma, alpha_z)


def lower_corner(J: int, z_plus: int, gamma: float, alpha_z: float = 0.0,
                 theta_c: float = 0.5) -> ConditionalConfig:
    u = (0.0,) + (1.0,) * (J - 1)
    t = (theta_c,) * J
    return ConditionalConfig(J, z_plus, u, t, t, gamma, alpha_z)


def upper_corner(J: int, z_plus: int, gamma: float, theta: float, delta: float,
                 alpha_z: float = 0.0) -> ConditionalConfig:
    """Every unit at both ratio extremes; requires theta, delta > 1 (or both 1)."""
    if theta == 1 and delta == 1:
        tC = 0.5
    elif theta > 1 and delta > 1:
        tC = (delta - 1) / (delta * theta - 1)
    else:
        raise DomainError("both ratio extremes are jointly attainable only when "
                          "theta and delta are both 1 or both above 1")
    tT = theta * tC
    u = (1.0,) + (0.0,) * (J - 1)
    return ConditionalConfig(J, z_plus, u, (tT,) * J, (tC,) * J, gamma, alpha_z)


def _containment_batch(seed, n, J, tol):
    rng = np.random.default_rng(seed)
    violations = 0
    for _ in range(n):
        gamma, theta, delta = rng.uniform(1, 3, 3)
        cfg = draw_config(rng, J, gamma, theta, delta)
        params = SensitivityParams(gamma, theta, delta)
        p = exact_conditional_prob(cfg)
        low, high = bound_interval(J, cfg.z_plus, params)
        if not (low - tol <= p <= high + tol):
            violations += 1
    return violations


def containment_suite(n: int = 10_000, J_values=(2, 3, 4), seed: int = 0,
                      batches: int = 4, threads: int = 1, tol: float = 1e-12) -> dict:
    """Count bound violations over random in-model configurations per J."""
    seqs = np.random.SeedSequence(seed).spawn(len(J_values) * batches)
    jobs = []
    for k, J in enumerate(J_values):
        sizes = [n // batches + (1 if b < n % batches else 0) for b in range(batches)]
        for b, size in enumerate(sizes):
            jobs.append((J, seqs[k * batches + b], size))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = list(pool.map(lambda j: _containment_batch(j[1], j[2], j[0], tol), jobs))
    else:
        counts = [_containment_batch(s, size, J, tol) for J, s, size in jobs]
    out = {J: {"checked": 0, "violations": 0} for J in J_values}
    for (J, _, size), v in zip(jobs, counts):
        out[J]["checked"] += size
        out[J]["violations"] += v
    return out


def attainment_suite(J_values=(2, 3, 4), tol: float = 1e-9) -> list:
    """Evaluate the corner configurations against the closed-form bounds."""
    rows = []
    grid = [(1.0, 1.0, 1.0), (2.0, 1.0, 1.0), (1.5, 1.2, 1.3), (2.5, 2.0, 1.5), (1.0, 1.4, 1.2)]
    for J in J_values:
        for z in range(1, J):
            for gamma, theta, delta in grid:
                params = SensitivityParams(gamma, theta, delta)
                low, high = bound_interval(J, z, params)
                for alpha_z in (-1.0, 0.0, 1.5):
                    p_low = exact_conditional_prob(lower_corner(J, z, gamma, alpha_z))
                    p_high = exact_conditional_prob(upper_corner(J, z, gamma, theta, delta, alpha_z))
                    rows.append({
                        "J": J, "z_plus": z, "gamma": gamma, "theta": theta, "delta": delta,
                        "alpha_z": alpha_z,
                        "lower_error": abs(p_low - low), "upper_error": abs(p_high - high),
                        "ok": abs(p_low - low) <= tol and abs(p_high - high) <= tol,
                    })
    return rows


def enumerate_tail(probs: Sequence[float], k: int) -> float:
    """P(sum >= k) by summing over all 2^I outcome vectors."""
    probs = list(probs)
    if len(probs) > MAX_SETS:
        raise TooLarge(f"{len(probs)} Bernoulli terms exceed {MAX_SETS}")
    total = 0.0
    for outcome in itertools.product((0, 1), repeat=len(probs)):
        if sum(outcome) < k:
            continue
        mass = 1.0
        for b, p in zip(outcome, probs):
            mass *= p if b else 1 - p
        total += mass
    return total


def _oracle_tail(probs, k, method):
    if k <= 0:
        return 1.0
    if method == "normal":
        p = np.asarray(probs)
        var = float((p * (1 - p)).sum())
        if var == 0:
            return 1.0 if p.sum() >= k else 0.0
        return 0.5 * math.erfc((k - p.sum()) / math.sqrt(2 * var))
    if len(probs) <= 12:
        return enumerate_tail(probs, k)
    # larger studies: exact tail via the pmf of the full sum
    pmf = np.array([1.0])
    for p in probs:
        pmf = np.convolve(pmf, [1 - p, p])
    return float(min(1.0, pmf[k:].sum()))


def exhaustive_worst_case(study: Study, params: SensitivityParams, a: int,
                          method: str = "exact") -> float:
    """Maximum tail probability over every attribution of ``a`` treated narrow cases.

    Mirrors the two early exits of the separable procedure: ``a >= T`` is
    certain, and an attribution whose expected count reaches the observed one
    makes ``a`` plausible outright.
    """
    pool = [k for k, s in enumerate(study.sets) if s.narrow_treated]
    T = len(pool)
    if a >= T:
        return 1.0
    if T > MAX_SETS or math.comb(T, a) > MAX_ATTRIBUTIONS:
        raise TooLarge(f"C({T}, {a}) attributions exceed the enumeration limit")
    m = params.multiplier
    J = study.J
    base = []
    for s in study.sets:
        z = s.z_plus
        base.append(m * z / (m * z + (J - z)) if z else 0.0)
    best = 0.0
    for chosen in itertools.combinations(pool, a):
        probs = list(base)
        for k in chosen:
            probs[k] = 0.0
        if a + math.fsum(probs) >= T - 1e-9:
            return 1.0
        best = max(best, _oracle_tail(probs, T - a, method))
    return best


def exhaustive_prediction_interval(study: Study, params: SensitivityParams,
                                   alpha: float = 0.05, method: str = "exact") -> int:
    a = 0
    while exhaustive_worst_case(study, params, a, method) <= alpha:
        a += 1
    return a
