import numpy as np
import pytest
from scipy.optimize import minimize

from dpmnl.baselines import (
    baseline_majority,
    fit_bayes_mnl,
    fit_bayes_qmnl,
    fit_mnl_ml,
    majority_class,
    mnl_ml_objective,
    mnl_predict,
)
from dpmnl.data import expand_quadratic
from dpmnl.engine import ChainConfig, run_chains
from dpmnl.model import Dataset, PriorSpec


def labels_only(y, J):
    y = np.asarray(y)
    return Dataset(np.zeros((y.size, 1)), y, J)


def test_majority_examples():
    assert majority_class(labels_only([1, 1, 2], 2)) == 1
    assert majority_class(labels_only([2, 3, 3, 2, 1], 3)) == 2
    test = labels_only(np.repeat([1, 2, 3, 4], 3), 4)
    assert baseline_majority(labels_only([4, 4, 1], 4), test).accuracy == 25.0
    with pytest.raises(ValueError):
        majority_class(labels_only([], 2))


def test_ml_separable_fits_training_data():
    x = np.array([[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]])
    d = Dataset(x, np.array([1, 1, 1, 2, 2, 2]), 2)
    fit = fit_mnl_ml(d, reg=1e-4)
    pred = mnl_predict(d.x, fit.alpha, fit.beta).argmax(axis=1) + 1
    assert np.array_equal(pred, d.y)
    assert fit.converged and fit.grad_norm < 1e-6


def twenty_case_fixture():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(20, 2))
    y = np.where(x[:, 0] + 0.5 * rng.normal(size=20) > 0, 1, 2)
    y[:4] = 3
    return Dataset(x, y, 3)


def test_ml_matches_multirestart_optimum():
    d = twenty_case_fixture()
    reg = 1e-2
    fit = fit_mnl_ml(d, reg=reg)
    assert fit.converged and fit.grad_norm < 1e-6
    X1 = np.column_stack([np.ones(d.n), d.x])
    Y = np.eye(3)[d.y - 1]

    def neg(v):
        value, grad, _ = mnl_ml_objective(v.reshape(3, 3), X1, Y, reg)
        return -value, -grad.ravel()

    rng = np.random.default_rng(1)
    best = -np.inf
    for _ in range(10):
        res = minimize(neg, rng.normal(scale=3, size=9), jac=True, method="BFGS", options={"gtol": 1e-10, "maxiter": 10_000})
        best = max(best, -res.fun)
    assert abs(fit.objective - best) < 1e-4


def test_ml_objective_gradient_and_hessian():
    d = twenty_case_fixture()
    X1 = np.column_stack([np.ones(d.n), d.x])
    Y = np.eye(3)[d.y - 1]
    P = np.random.default_rng(2).normal(size=(3, 3))
    _, g, H = mnl_ml_objective(P, X1, Y, 0.1)
    h = 1e-6
    for k in range(9):
        e = np.zeros(9)
        e[k] = h
        up = mnl_ml_objective(P + e.reshape(3, 3), X1, Y, 0.1)
        down = mnl_ml_objective(P - e.reshape(3, 3), X1, Y, 0.1)
        assert (up[0] - down[0]) / (2 * h) == pytest.approx(g.ravel()[k], abs=1e-5)
        np.testing.assert_allclose((up[1] - down[1]).ravel() / (2 * h), H[:, k], atol=1e-5)


def test_ml_rejects_empty():
    with pytest.raises(ValueError):
        fit_mnl_ml(Dataset(np.zeros((0, 1)), np.zeros(0, dtype=int), 2))


def small_train(seed=3):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(40, 2))
    logits = np.column_stack([2 * x[:, 0], -2 * x[:, 0], x[:, 1]])
    y = logits.argmax(axis=1) + 1
    return Dataset(x, y, 3)


CFG = ChainConfig(n_iterations=60, burn_in=20, seed=5)


def test_bayes_mnl_is_engine_with_one_component():
    d = small_train()
    a = fit_bayes_mnl(d, PriorSpec.simulation(), CFG)
    b = run_chains(d, ChainConfig(n_iterations=60, burn_in=20, seed=5, single_component=True), PriorSpec.simulation())
    for s, t in zip(a[0], b[0]):
        assert s.state.n_components == 1
        assert s.log_lik == t.log_lik


def test_qmnl_is_mnl_on_quadratic_features():
    d = small_train()
    a = fit_bayes_qmnl(d, PriorSpec.simulation(), CFG)
    b = fit_bayes_mnl(expand_quadratic(d), PriorSpec.simulation(), CFG)
    assert [s.log_lik for s in a[0]] == [s.log_lik for s in b[0]]
    theta = next(iter(a[0][0].state.components.values()))
    assert theta.beta.shape == (5, 3)


def test_bayes_mnl_prior_reproduction_without_data():
    empty = Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 3)
    prior = PriorSpec.simulation()
    chains = fit_bayes_mnl(empty, prior, ChainConfig(n_iterations=4000, burn_in=100, seed=6))
    log_eta2 = np.array([2 * np.log(s.hyper.eta) for s in chains[0]])
    assert abs(log_eta2.mean() - prior.eta_logvar_mean) < 0.3
    assert abs(log_eta2.std() - prior.eta_logvar_sd) < 0.3


def test_tighter_coefficient_prior_shrinks_beta():
    d = small_train()
    wide = PriorSpec.simulation()
    tight = PriorSpec.simulation(xi_logvar_mean=-10.0, xi_logvar_sd=0.1)
    cfg = ChainConfig(n_iterations=200, burn_in=50, seed=7)

    def mean_abs_beta(prior):
        chains = fit_bayes_mnl(d, prior, cfg)
        return np.mean([np.abs(next(iter(s.state.components.values())).phi[:, 1:]).mean() for s in chains[0]])

    assert mean_abs_beta(tight) < 0.5 * mean_abs_beta(wide)
