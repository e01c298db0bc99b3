"""Synthetic case-case populations and matched studies with known ground truth.

Treatment follows ``expit(alpha_z + effect * x + log(gamma) * u)`` with
``u ~ Uniform[0, 1]``. Always-cases become narrow with probability
``theta_C`` untreated and ``theta_T`` treated, where ``theta_T`` pushes both
ratio constraints to their limits. On top of those, treated units whose
narrow case exists only because of the treatment are added so that they make
up ``true_attributable_rate`` of all treated narrow cases.

A single ``numpy`` generator seeded from ``SimConfig.seed`` drives
everything; the population and the matching step use separate child streams.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleThetas, InsufficientMarginals, InvalidParameter
from .io import PopulationRecord
from .model import Unit, validate_study


@dataclass(frozen=True)
class SimConfig:
    n_sets: int = 200
    J: int = 3
    gamma: float = 1.0
    theta: float = 1.0
    delta: float = 1.0
    alpha_z: float = -1.0
    covariate_spec: tuple = (("sex", "bernoulli:0.5"), ("age", "normal"))
    true_attributable_rate: float = 0.0
    seed: int = 0
    theta_c_range: tuple = (0.2, 0.8)
    covariate_effect: float = 0.0
    population_size: int = 0

    def __post_init__(self):
        for name in ("gamma", "theta", "delta"):
            if getattr(self, name) < 1:
                raise InvalidParameter(f"{name} must be ≥ 1")
        if self.n_sets < 1 or self.J < 2:
            raise InvalidParameter("need n_sets ≥ 1 and J ≥ 2")
        if not 0 <= self.true_attributable_rate < 1:
            raise InvalidParameter("true_attributable_rate must lie in [0, 1)")

    @property
    def n_population(self) -> int:
        return self.population_size or 4 * self.J * self.n_sets


def _expit(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def theta_treated(theta_c, theta: float, delta: float):
    """Largest narrow probability under treatment allowed by both ratio bounds."""
    theta_c = np.asarray(theta_c, dtype=float)
    if np.any((theta_c <= 0) | (theta_c >= 1)):
        raise InfeasibleThetas("theta_C must lie in (0, 1)")
    t = np.minimum(theta * theta_c, 1 - (1 - theta_c) / delta)
    if np.any(t >= 1) or np.any(t <= 0):
        raise InfeasibleThetas("implied theta_T outside (0, 1)")
    return t


def _draw_covariates(rng, spec, n):
    out = {}
    for name, tag in spec:
        kind, _, arg = tag.partition(":")
        if kind == "bernoulli":
            out[name] = (rng.uniform(size=n) < float(arg or 0.5)).astype(float)
        elif kind == "categorical":
            k = int(arg or 3)
            out[name] = np.array([f"L{v}" for v in rng.integers(0, k, n)], dtype=object)
        elif kind == "normal":
            out[name] = rng.standard_normal(n)
        elif kind == "uniform":
            out[name] = rng.uniform(size=n)
        else:
            raise InvalidParameter(f"unknown covariate distribution {tag!r}")
    return out


def _draw_units(cfg: SimConfig, rng, n):
    cov = _draw_covariates(rng, cfg.covariate_spec, n)
    u = rng.uniform(size=n)
    eta = np.full(n, float(cfg.alpha_z))
    for name, tag in cfg.covariate_spec:
        if not tag.startswith("categorical") and cfg.covariate_effect:
            eta = eta + cfg.covariate_effect * cov[name]
    eta = eta + math.log(cfg.gamma) * u
    z = (rng.uniform(size=n) < _expit(eta)).astype(int)
    return cov, u, z


def _draw_population(cfg: SimConfig, rng) -> dict:
    lo, hi = cfg.theta_c_range
    if not 0 < lo <= hi < 1:
        raise InfeasibleThetas("theta_c_range must lie inside (0, 1)")
    n = cfg.n_population
    cov, u, z = _draw_units(cfg, rng, n)
    theta_c = rng.uniform(lo, hi, n)
    theta_t = theta_treated(theta_c, cfg.theta, cfg.delta)
    narrow = (rng.uniform(size=n) < np.where(z == 1, theta_t, theta_c)).astype(int)
    caused = np.zeros(n, dtype=int)

    r = cfg.true_attributable_rate
    n_caused = int(round(r * int(np.sum(narrow * z)) / (1 - r))) if r > 0 else 0
    if n_caused:
        # caused narrow cases are drawn from the treated part of the population
        keep = {k: [] for k in cov}
        keep_u = []
        while len(keep_u) < n_caused:
            c2, u2, z2 = _draw_units(cfg, rng, 4 * n_caused)
            sel = np.flatnonzero(z2 == 1)[: n_caused - len(keep_u)]
            for k in cov:
                keep[k].extend(c2[k][sel])
            keep_u.extend(u2[sel])
        for k in cov:
            cov[k] = np.concatenate([cov[k], np.asarray(keep[k], dtype=cov[k].dtype)])
        u = np.concatenate([u, keep_u])
        z = np.concatenate([z, np.ones(n_caused, dtype=int)])
        narrow = np.concatenate([narrow, np.ones(n_caused, dtype=int)])
        theta_c = np.concatenate([theta_c, np.full(n_caused, np.nan)])
        theta_t = np.concatenate([theta_t, np.full(n_caused, np.nan)])
        caused = np.concatenate([caused, np.ones(n_caused, dtype=int)])
    return {"cov": cov, "u": u, "z": z, "narrow": narrow, "theta_c": theta_c,
            "theta_t": theta_t, "caused": caused}


def _streams(seed: int):
    pop_seq, match_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(pop_seq), np.random.default_rng(match_seq)


def _covariate_value(v):
    return float(v) if isinstance(v, (float, np.floating)) else str(v)


def simulate_population(cfg: SimConfig) -> list:
    """Population records with ground truth attached under ``truth``."""
    rng, _ = _streams(cfg.seed)
    d = _draw_population(cfg, rng)
    names = [name for name, _ in cfg.covariate_spec]
    records = []
    for k in range(len(d["z"])):
        truth = {
            "u": float(d["u"][k]),
            "theta_c": float(d["theta_c"][k]),
            "theta_t": float(d["theta_t"][k]),
            "caused": int(d["caused"][k]),
        }
        records.append(PopulationRecord(
            unit_id=str(k + 1),
            case_type="narrow" if d["narrow"][k] else "marginal",
            treated=int(d["z"][k]),
            covariates={n: _covariate_value(d["cov"][n][k]) for n in names},
            truth=truth,
        ))
    return records


def simulate_matched(cfg: SimConfig, with_covariates: bool = True, truth: bool = False):
    """Random 1:(J-1) matched study within exact strata, plus the true attributable count.

    Strata are formed from the discrete covariates (bernoulli, categorical).
    With ``truth`` every unit carries a ``caused`` column; keep it away from
    analysis inputs.
    """
    rng, match_rng = _streams(cfg.seed)
    d = _draw_population(cfg, rng)
    discrete = [n for n, tag in cfg.covariate_spec
                if tag.startswith(("bernoulli", "categorical"))]
    n = len(d["z"])
    strata = [tuple(d["cov"][name][k] for name in discrete) for k in range(n)]
    pools = defaultdict(list)
    for k in match_rng.permutation(np.flatnonzero(d["narrow"] == 0)):
        pools[strata[k]].append(int(k))

    names = [name for name, _ in cfg.covariate_spec] if with_covariates else []
    units, true_A, made = [], 0, 0
    for k in match_rng.permutation(np.flatnonzero(d["narrow"] == 1)):
        pool = pools[strata[k]]
        if len(pool) < cfg.J - 1:
            continue
        members = [int(k)] + [pool.pop() for _ in range(cfg.J - 1)]
        made += 1
        true_A += int(d["caused"][k])
        for m in members:
            cov = tuple((nm, _covariate_value(d["cov"][nm][m])) for nm in names)
            if truth:
                cov += (("caused", float(d["caused"][m])),)
            units.append(Unit(str(made), 0, int(d["z"][m]), int(d["narrow"][m]), cov, str(m + 1)))
        if made == cfg.n_sets:
            break
    if made < cfg.n_sets:
        raise InsufficientMarginals(
            f"formed {made} of {cfg.n_sets} sets; increase population_size")
    return validate_study(units), true_A


def simulate_random_intercept(n_groups: int, group_size: int, beta: dict, sigma: float,
                              seed: int = 0, treat_prob: float = 0.5):
    """Random-intercept logistic data for calibration tests.

    ``beta`` maps ``"intercept"``, covariate names and ``"treated"`` to true
    coefficients; covariates other than treatment are standard normal.
    Returns ``(y, X, groups, names)``.
    """
    rng = np.random.default_rng(seed)
    n = n_groups * group_size
    groups = np.repeat(np.arange(n_groups), group_size)
    names = list(beta)
    X = np.empty((n, len(names)))
    for k, name in enumerate(names):
        if name == "intercept":
            X[:, k] = 1.0
        elif name == "treated":
            X[:, k] = rng.uniform(size=n) < treat_prob
        else:
            X[:, k] = rng.standard_normal(n)
    b = rng.standard_normal(n_groups) * sigma
    eta = X @ np.array([beta[nm] for nm in names]) + b[groups]
    y = (rng.uniform(size=n) < _expit(eta)).astype(float)
    return y, X, groups, names
