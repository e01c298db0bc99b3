"""Random-intercept logistic regression used to calibrate Theta and Delta.

The model for narrow-case status of unit i in group g is

    logit P(narrow) = x_i' beta + sigma * b_g,   b_g ~ N(0, 1).

The marginal likelihood integrates b_g out with adaptive Gauss-Hermite
quadrature: nodes are recentred at each group's posterior mode and scaled by
its curvature before every Newton step. Between recentrings the nodes are
held fixed, so the objective is a smooth log-sum-exp whose gradient and
Hessian are available in closed form.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .errors import InvalidParameter, MissingColumn, NotConverged, Separation, TooFewGroups
from .model import _set_sort_key

CAVEATS = (
    "u is treated as a latent variable in the fitted model but acts as an unmeasured "
    "confounder in the sensitivity model; the two need not coincide.",
    "Estimation error of the fitted ratios is not propagated into the sensitivity analysis.",
)

DIVERGENCE = 30.0


@dataclass
class CalibrationFit:
    coefficients: dict
    random_intercept_sd: float
    converged: bool
    log_likelihood: float
    n_iter: int = 0
    gradient_norm: float = float("nan")
    n_groups: int = 0
    group_modes: dict = field(default_factory=dict)
    n_nodes: int = 21

    def as_dict(self) -> dict:
        return {
            "coefficients": dict(self.coefficients),
            "random_intercept_sd": self.random_intercept_sd,
            "converged": self.converged,
            "log_likelihood": self.log_likelihood,
            "iterations": self.n_iter,
            "n_groups": self.n_groups,
        }


@dataclass
class Design:
    y: np.ndarray
    X: np.ndarray
    groups: np.ndarray
    names: list
    group_labels: list

    def group_array(self) -> np.ndarray:
        return np.asarray(self.group_labels, dtype=object)[self.groups]


def design_from_records(records: Sequence, covariates: Sequence[str] = (),
                        group: str = "set_id", treatment: str = "treated") -> Design:
    """Outcome = narrow indicator; columns = intercept, covariates, treatment.

    Numeric covariates enter as-is; labelled ones are one-hot coded with the
    first level (sorted) dropped. ``group`` names a covariate column.
    """
    if not records:
        raise InvalidParameter("no records")
    if group not in records[0].covariates:
        raise MissingColumn(f"grouping column {group!r} not found")
    labels = [str(r.covariates[group]) for r in records]
    uniq = sorted(set(labels), key=_set_sort_key)
    index = {g: k for k, g in enumerate(uniq)}
    cols, names = [np.ones(len(records))], ["intercept"]
    for name in covariates:
        values = [r.covariates.get(name) for r in records]
        if all(isinstance(v, (int, float)) and v is not None for v in values):
            cols.append(np.asarray(values, dtype=float))
            names.append(name)
        else:
            for level in sorted({str(v) for v in values})[1:]:
                cols.append(np.asarray([str(v) == level for v in values], dtype=float))
                names.append(f"{name}={level}")
    cols.append(np.asarray([r.treated for r in records], dtype=float))
    names.append(treatment)
    y = np.asarray([r.narrow for r in records], dtype=float)
    return Design(y, np.column_stack(cols), np.asarray([index[g] for g in labels]), names, uniq)


def check_separation(y: np.ndarray, X: np.ndarray, names: Sequence[str]) -> None:
    """Raise :class:`Separation` for an outcome split perfectly by one column."""
    if y.min() == y.max():
        raise Separation("intercept", "outcome is constant")
    for k, name in enumerate(names):
        x = X[:, k]
        if x.min() == x.max():
            continue
        x1, x0 = x[y == 1], x[y == 0]
        if x0.max() <= x1.min() or x1.max() <= x0.min():
            raise Separation(name)


class _Objective:
    """Fixed-node AGQ log-likelihood with analytic derivatives."""

    def __init__(self, y, X, groups, n_groups, nodes, log_weights):
        order = np.argsort(groups, kind="stable")
        self.y, self.X, self.g = y[order], X[order], groups[order]
        self.starts = np.flatnonzero(np.r_[True, np.diff(self.g) != 0])
        self.n_groups = n_groups
        self.x_nodes = nodes
        self.log_w = log_weights
        self.mu = np.zeros(n_groups)
        self.tau = np.ones(n_groups)

    def _gsum(self, a):
        return np.add.reduceat(a, self.starts, axis=0)

    def modes(self, beta, s, iters=50):
        """Posterior mode and curvature scale of each group's standardized intercept."""
        eta0 = self.X @ beta
        b = np.zeros(self.n_groups)
        for _ in range(iters):
            p = expit(eta0 + s * b[self.g])
            grad = s * self._gsum(self.y - p) - b
            hess = -(s * s) * self._gsum(p * (1 - p)) - 1.0
            step = grad / hess
            b = b - step
            if np.max(np.abs(step)) < 1e-12:
                break
        p = expit(eta0 + s * b[self.g])
        curv = (s * s) * self._gsum(p * (1 - p)) + 1.0
        return b, 1.0 / np.sqrt(curv)

    def recenter(self, beta, s):
        self.mu, self.tau = self.modes(beta, s)

    def _node_values(self):
        # b_gk and the constant part of each node's log weight
        b = self.mu[:, None] + math.sqrt(2.0) * self.tau[:, None] * self.x_nodes[None, :]
        c = (self.log_w[None, :] + self.x_nodes[None, :] ** 2
             + np.log(math.sqrt(2.0) * self.tau)[:, None]
             - 0.5 * b**2 - 0.5 * math.log(2 * math.pi))
        return b, c

    def evaluate(self, beta, s, derivs=True):
        b, c = self._node_values()
        B = b[self.g]                                   # n x K
        eta = (self.X @ beta)[:, None] + s * B
        ll_obs = self.y[:, None] * eta + log_expit(-eta)  # y*eta - log(1 + e^eta)
        L = self._gsum(ll_obs) + c                      # G x K
        logL = logsumexp(L, axis=1)
        total = float(logL.sum())
        if not derivs:
            return total
        omega = np.exp(L - logL[:, None])               # posterior node weights
        p = expit(eta)
        r = self.y[:, None] - p
        w = p * (1 - p)
        F = np.concatenate([np.broadcast_to(self.X[:, None, :], B.shape + (self.X.shape[1],)),
                            B[:, :, None]], axis=2)     # n x K x d
        Ggk = self._gsum(r[:, :, None] * F)             # G x K x d
        Hgk = -self._gsum(np.einsum("nk,nki,nkj->nkij", w, F, F))
        grad_g = np.einsum("gk,gkd->gd", omega, Ggk)
        hess = (np.einsum("gk,gkij->ij", omega, Hgk)
                + np.einsum("gk,gki,gkj->ij", omega, Ggk, Ggk)
                - grad_g.T @ grad_g)
        return total, grad_g.sum(axis=0), hess


def _newton(obj, theta, free, max_iter, tol):
    """Damped Newton ascent on the free coordinates, recentring nodes each step."""
    n_iter, gnorm = 0, float("inf")
    for n_iter in range(1, max_iter + 1):
        obj.recenter(theta[:-1], theta[-1])
        f, g, H = obj.evaluate(theta[:-1], theta[-1])
        g, H = g[free], H[np.ix_(free, free)]
        gnorm = float(np.max(np.abs(g)))
        if gnorm < tol:
            return theta, f, True, n_iter, gnorm
        lam = 0.0
        while True:
            try:
                A = -H + lam * np.eye(len(g))
                np.linalg.cholesky(A)
                step = np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                lam = max(2 * lam, 1e-6)
                continue
            t = 1.0
            improved = False
            for _ in range(30):
                trial = theta.copy()
                trial[free] += t * step
                if obj.evaluate(trial[:-1], trial[-1], derivs=False) >= f - 1e-12:
                    improved = True
                    break
                t /= 2
            if improved or lam > 1e8:
                break
            lam = max(10 * lam, 1e-3)
        theta = trial
        if np.any(np.abs(theta[:-1]) > DIVERGENCE):
            return theta, f, False, n_iter, gnorm
    return theta, f, False, n_iter, gnorm


def fit_random_intercept_logistic(y, X, groups, names: Sequence[str] = None, n_nodes: int = 21,
                                  fix_sigma: Optional[float] = None, max_iter: int = 200,
                                  tol: float = 1e-6, min_groups: int = 2) -> CalibrationFit:
    """Maximum-likelihood fit; ``fix_sigma`` pins the random-intercept SD (0 gives plain logistic)."""
    y = np.asarray(y, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] != y.shape[0]:
        X = X.T
    groups = np.asarray(groups)
    names = list(names) if names is not None else [f"x{k}" for k in range(X.shape[1])]
    labels, gidx = np.unique(groups, return_inverse=True)
    n_groups = len(labels)
    if n_groups < min_groups:
        raise TooFewGroups(f"{n_groups} group(s); at least {min_groups} required")
    check_separation(y, X, names)

    x_nodes, w_nodes = np.polynomial.hermite.hermgauss(n_nodes)
    obj = _Objective(y, X, gidx, n_groups, x_nodes, np.log(w_nodes))

    d = X.shape[1]
    theta = np.zeros(d + 1)
    free = np.arange(d + 1)
    if fix_sigma is not None:
        if fix_sigma < 0:
            raise InvalidParameter("fix_sigma must be ≥ 0")
        theta[-1] = fix_sigma
        free = np.arange(d)
    else:
        # warm start from the fixed-effects fit; sigma = 0 is a stationary point
        theta, _, _, _, _ = _newton(obj, theta, np.arange(d), max_iter, tol)
        theta[-1] = 1.0
    theta, f, converged, n_iter, gnorm = _newton(obj, theta, free, max_iter, tol)
    for k in range(d):
        if abs(theta[k]) > DIVERGENCE:
            raise Separation(names[k], f"coefficient for {names[k]!r} diverges")
    if not converged:
        warnings.warn(f"no convergence after {n_iter} iterations (max |grad| = {gnorm:.3g})",
                      stacklevel=2)
    sigma = abs(float(theta[-1]))
    obj.recenter(theta[:-1], theta[-1])
    f = obj.evaluate(theta[:-1], theta[-1], derivs=False)
    modes = {str(labels[k]): float(obj.mu[k] * sigma) for k in range(n_groups)}
    return CalibrationFit(dict(zip(names, map(float, theta[:-1]))), sigma, converged, f,
                          n_iter, gnorm, n_groups, modes, n_nodes)


def log_likelihood(fit: CalibrationFit, y, X, groups, n_nodes: int = 21) -> float:
    """AGQ marginal log-likelihood at the fitted parameters with ``n_nodes`` nodes."""
    y = np.asarray(y, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels, gidx = np.unique(np.asarray(groups), return_inverse=True)
    x_nodes, w_nodes = np.polynomial.hermite.hermgauss(n_nodes)
    obj = _Objective(y, X, gidx, len(labels), x_nodes, np.log(w_nodes))
    beta = np.array(list(fit.coefficients.values()))
    obj.recenter(beta, fit.random_intercept_sd)
    return obj.evaluate(beta, fit.random_intercept_sd, derivs=False)


def fit_records(records: Sequence, covariates: Sequence[str] = (), group: str = "set_id",
                **kwargs):
    """Fit on population records; returns ``(fit, design)``."""
    design = design_from_records(records, covariates, group)
    fit = fit_random_intercept_logistic(design.y, design.X, design.group_array(),
                                        design.names, **kwargs)
    return fit, design


def ratio_bounds(fit: CalibrationFit, X, groups, treatment: str = "treated"):
    """Maxima over subjects of the fitted narrow-probability ratios.

    For each subject the treatment column is set to 1 and to 0 with the
    group's posterior-mode intercept; returns ``(theta_hat, delta_hat)`` where
    ``theta_hat = max p1/p0`` and ``delta_hat = max (1 - p0)/(1 - p1)``.
    """
    if not fit.converged:
        raise NotConverged("ratio bounds need a converged fit")
    names = list(fit.coefficients)
    if treatment not in names:
        raise InvalidParameter(f"no {treatment!r} coefficient in the fit")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    beta = np.array([fit.coefficients[n] for n in names])
    k = names.index(treatment)
    offset = np.array([fit.group_modes.get(str(g), 0.0) for g in groups])
    X1, X0 = X.copy(), X.copy()
    X1[:, k], X0[:, k] = 1.0, 0.0
    eta1, eta0 = X1 @ beta + offset, X0 @ beta + offset
    # ratios on the log scale keep extreme linear predictors finite
    log_theta = log_expit(eta1) - log_expit(eta0)
    log_delta = log_expit(-eta0) - log_expit(-eta1)
    return float(np.exp(log_theta.max())), float(np.exp(log_delta.max()))
