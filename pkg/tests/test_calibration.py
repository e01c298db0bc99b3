import math

import numpy as np
import pytest
from scipy.special import expit

from case2.calibration import (
    CalibrationFit,
    design_from_records,
    fit_random_intercept_logistic,
    fit_records,
    log_likelihood,
    ratio_bounds,
)
from case2.errors import MissingColumn, NotConverged, Separation, TooFewGroups
from case2.io import PopulationRecord
from case2.simulate import simulate_random_intercept

BETA = {"intercept": -0.5, "age": 0.4, "treated": 0.8}


@pytest.fixture(scope="module")
def simulated():
    y, X, g, names = simulate_random_intercept(500, 4, BETA, 1.0, seed=0)
    return y, X, g, names, fit_random_intercept_logistic(y, X, g, names)


def test_recovers_parameters(simulated):
    *_, fit = simulated
    assert fit.converged and fit.gradient_norm < 1e-6
    for name, value in BETA.items():
        assert abs(fit.coefficients[name] - value) <= 0.15
    assert abs(fit.random_intercept_sd - 1.0) <= 0.2


def test_quadrature_consistency(simulated):
    y, X, g, _, fit = simulated
    assert abs(log_likelihood(fit, y, X, g, 41) - fit.log_likelihood) < 1e-6


def test_intercept_only_closed_form():
    # every group has the same composition, so no between-group variance
    y = np.tile([1.0, 0.0, 0.0, 0.0, 1.0], 60)
    g = np.repeat(np.arange(60), 5)
    X = np.ones((y.size, 1))
    target = math.log(0.4 / 0.6)
    free = fit_random_intercept_logistic(y, X, g, ["intercept"])
    assert free.coefficients["intercept"] == pytest.approx(target, abs=1e-6)
    assert free.random_intercept_sd < 1e-3
    fixed = fit_random_intercept_logistic(y, X, g, ["intercept"], fix_sigma=0.0)
    assert fixed.coefficients["intercept"] == pytest.approx(target, abs=1e-10)


def _plain_logistic(y, X):
    beta = np.zeros(X.shape[1])
    for _ in range(100):
        p = expit(X @ beta)
        step = np.linalg.solve((X * (p * (1 - p))[:, None]).T @ X, X.T @ (y - p))
        beta += step
        if np.max(np.abs(step)) < 1e-13:
            break
    return beta


def test_sigma_zero_is_plain_logistic():
    rng = np.random.default_rng(4)
    for _ in range(3):
        n = 300
        X = np.column_stack([np.ones(n), rng.normal(size=n), rng.normal(size=n),
                             rng.integers(0, 2, n)])
        y = (rng.uniform(size=n) < expit(X @ np.array([0.2, 0.5, -0.7, 0.9]))).astype(float)
        g = np.repeat(np.arange(60), 5)
        fit = fit_random_intercept_logistic(y, X, g, fix_sigma=0.0)
        assert np.allclose(list(fit.coefficients.values()), _plain_logistic(y, X), atol=1e-7)


def test_separated_binary_covariate():
    y = np.array([0, 0, 0, 1, 1, 1, 0, 1], float)
    X = np.column_stack([np.ones(8), y])
    with pytest.raises(Separation) as info:
        fit_random_intercept_logistic(y, X, np.arange(8) // 2, ["intercept", "treated"])
    assert info.value.covariate == "treated"


def test_constant_outcome_is_separation():
    with pytest.raises(Separation):
        fit_random_intercept_logistic(np.ones(6), np.ones((6, 1)), [0, 0, 1, 1, 2, 2])


def test_too_few_groups():
    with pytest.raises(TooFewGroups):
        fit_random_intercept_logistic(np.array([0, 1, 0.0]), np.ones((3, 1)), [0, 0, 0])


def _fit(coefs, modes=None, converged=True):
    return CalibrationFit(coefs, 0.5, converged, -1.0, group_modes=modes or {})


def test_zero_treatment_coefficient_gives_ones():
    X = np.column_stack([np.ones(5), np.linspace(-3, 3, 5), [0, 1, 0, 1, 1]])
    fit = _fit({"intercept": 0.3, "age": 2.0, "treated": 0.0}, {"a": 1.5, "b": -4.0})
    assert ratio_bounds(fit, X, ["a", "b", "a", "b", "b"]) == (1.0, 1.0)


def test_zero_effect_data_gives_ones():
    # each subject appears once treated and once untreated with the same outcome
    rng = np.random.default_rng(3)
    n = 200
    age = rng.normal(size=n)
    y = (rng.uniform(size=n) < expit(0.3 * age)).astype(float)
    y, age = np.r_[y, y], np.r_[age, age]
    X = np.column_stack([np.ones(2 * n), age, np.r_[np.zeros(n), np.ones(n)]])
    g = np.r_[np.arange(n), np.arange(n)] // 4
    fit = fit_random_intercept_logistic(y, X, g, ["intercept", "age", "treated"])
    theta_hat, delta_hat = ratio_bounds(fit, X, g)
    assert theta_hat == pytest.approx(1.0, abs=1e-6)
    assert delta_hat == pytest.approx(1.0, abs=1e-6)


def test_single_subject_by_hand():
    fit = _fit({"intercept": -1.0, "x": 0.5, "treated": 0.7}, {"g": 0.2})
    X = np.array([[1.0, 2.0, 0.0]])
    p1 = expit(-1.0 + 1.0 + 0.7 + 0.2)
    p0 = expit(-1.0 + 1.0 + 0.2)
    theta_hat, delta_hat = ratio_bounds(fit, X, ["g"])
    assert theta_hat == pytest.approx(p1 / p0, rel=1e-12)
    assert delta_hat == pytest.approx((1 - p0) / (1 - p1), rel=1e-12)


def test_positive_effect_ratios_at_least_one(simulated):
    y, X, g, _, fit = simulated
    theta_hat, delta_hat = ratio_bounds(fit, X, g)
    assert theta_hat >= 1 and delta_hat >= 1


def test_not_converged():
    with pytest.raises(NotConverged):
        ratio_bounds(_fit({"treated": 0.1}, converged=False), np.ones((1, 1)), ["a"])


def test_records_design():
    recs = [PopulationRecord(str(k), "narrow" if k % 3 == 0 else "marginal", k % 2,
                             {"set_id": str(k // 3), "site": "AB"[k % 2 == 0 and k % 4 == 0]})
            for k in range(12)]
    d = design_from_records(recs, ["site"])
    assert d.names == ["intercept", "site=B", "treated"]
    assert d.X.shape == (12, 3) and d.y.sum() == 4
    assert list(d.group_array()[:4]) == ["0", "0", "0", "1"]
    with pytest.raises(MissingColumn):
        design_from_records(recs, [], group="cluster")


def test_fit_records_on_simulated_study():
    from case2.io import study_records
    from case2.simulate import SimConfig, simulate_matched
    study, _ = simulate_matched(SimConfig(n_sets=150, seed=1, gamma=1.5, theta=1.3, delta=1.2))
    fit, design = fit_records(study_records(study), ["age"])
    assert fit.converged and fit.n_groups == 150
