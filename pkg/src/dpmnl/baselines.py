"""Linear baselines: majority class, maximum-likelihood MNL, Bayesian MNL."""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import NamedTuple

import numpy as np

from .data import expand_quadratic
from .engine import ChainConfig, run_chains
from .metrics import MetricsReport, evaluate
from .model import Dataset, PriorSpec

logger = logging.getLogger(__name__)


def majority_class(train: Dataset) -> int:
    """Most frequent training label; ties go to the smallest label."""
    if train.n == 0:
        raise ValueError("empty training set")
    return int(np.argmax(np.bincount(train.y, minlength=train.n_classes + 1)[1:]) + 1)


def baseline_majority(train: Dataset, test: Dataset) -> MetricsReport:
    label = majority_class(train)
    return evaluate(np.full(test.n, label), test.y, test.n_classes, test.hierarchy)


class MlFit(NamedTuple):
    alpha: np.ndarray
    beta: np.ndarray  # (p, J)
    objective: float
    grad_norm: float
    converged: bool
    iterations: int


def mnl_ml_objective(params, X1, Y, reg):
    """Penalised log likelihood ``sum log P(y|x) - reg * |beta|^2 / 2`` with
    gradient and Hessian.  ``params`` is the (J, p + 1) weight matrix,
    column 0 holding the intercepts."""
    J, d = params.shape
    logits = X1 @ params.T
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    P = e / s
    penalty = params.copy()
    penalty[:, 0] = 0.0
    value = float(np.sum(logits * Y) - np.sum(m + np.log(s)) - 0.5 * reg * np.sum(penalty**2))
    grad = (Y - P).T @ X1 - reg * penalty
    # Hessian of the log likelihood: -sum_i (diag(p_i) - p_i p_i^T) kron x_i x_i^T
    H = np.zeros((J, d, J, d))
    for j in range(J):
        for k in range(J):
            w = P[:, j] * ((j == k) - P[:, k])
            H[j, :, k, :] = -(X1 * w[:, None]).T @ X1
    H = H.reshape(J * d, J * d)
    ridge = np.full((J, d), reg)
    ridge[:, 0] = 0.0
    H -= np.diag(ridge.ravel())
    return value, grad, H


def fit_mnl_ml(train: Dataset, reg: float = 1e-4, tol: float = 1e-6, max_iter: int = 200) -> MlFit:
    """Maximum-likelihood MNL with a small ridge on the coefficients.

    Damped Newton ascent from zero.  The redundant intercept direction has a
    singular Hessian, so steps use the minimum-norm least-squares solution.
    """
    if train.n == 0:
        raise ValueError("empty training set")
    J, p = train.n_classes, train.p
    X1 = np.column_stack([np.ones(train.n), train.x])
    Y = np.eye(J)[train.y - 1]
    params = np.zeros((J, p + 1))
    value, grad, H = mnl_ml_objective(params, X1, Y, reg)
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(grad) < tol:
            break
        step = np.linalg.lstsq(-H, grad.ravel(), rcond=None)[0].reshape(J, p + 1)
        t = 1.0
        while True:
            cand = params + t * step
            new_value, new_grad, new_H = mnl_ml_objective(cand, X1, Y, reg)
            if new_value >= value or t < 1e-10:
                break
            t *= 0.5
        if new_value < value:
            break
        params, value, grad, H = cand, new_value, new_grad, new_H
    gnorm = float(np.linalg.norm(grad))
    converged = gnorm < tol
    if not converged:
        logger.warning("ML MNL did not converge: gradient norm %.3g after %d iterations", gnorm, it)
    return MlFit(params[:, 0].copy(), params[:, 1:].T.copy(), value, gnorm, converged, it)


def mnl_predict(X, alpha, beta) -> np.ndarray:
    logits = alpha + np.asarray(X, dtype=float) @ beta
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def fit_bayes_mnl(train: Dataset, prior: PriorSpec, config: ChainConfig, hierarchy=None, n_jobs=1):
    """Bayesian (cor)MNL: the mixture engine restricted to one component.

    Returns a list of per-chain sample lists.
    """
    config = replace(config, single_component=True)
    return run_chains(train, config, prior, hierarchy, n_jobs=n_jobs)


def fit_bayes_qmnl(train: Dataset, prior: PriorSpec, config: ChainConfig, n_jobs=1):
    """Bayesian MNL on the quadratic expansion of the covariates."""
    return fit_bayes_mnl(expand_quadratic(train), prior, config, n_jobs=n_jobs)
