"""Posterior-predictive class probabilities from retained samples."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .engine import PosteriorSample, draw_g0
from .model import ModelError, PriorSpec, joint_log_density_all_classes

NORMALIZATION_TOL = 1e-10


@dataclass(eq=False)
class PredictiveReport:
    """Per-case class probabilities (m, J), argmax labels (1-based), and the
    log predictive covariate density ``log P(x')`` (``nan`` for conditional
    models)."""

    probs: np.ndarray
    labels: np.ndarray
    log_px: np.ndarray

    def __post_init__(self):
        check_normalized(self.probs)


def check_normalized(probs, tol: float = NORMALIZATION_TOL) -> None:
    probs = np.asarray(probs)
    if probs.size and (np.any(probs < 0) or np.max(np.abs(probs.sum(axis=1) - 1.0)) > tol):
        raise ModelError("predictive probabilities are not normalised")


def _design(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return X, np.column_stack([np.ones(X.shape[0]), X])


def predictive_log_joint(X, sample: PosteriorSample, prior: PriorSpec, composition, n_g0_draws, rng):
    """``log P(y'=j, x' | sample)`` for every row of ``X``, shape (m, J).

    The occupied components enter with weights ``n_c / (n + gamma)``; the
    new-component term has weight ``gamma / (n + gamma)`` and is estimated by
    averaging over ``n_g0_draws`` fresh baseline draws (omitted when zero).
    """
    X, X1 = _design(X)
    st = sample.state
    gamma = sample.hyper.gamma
    n = sum(st.counts.values())
    log_denom = math.log(n + gamma)
    terms = []
    for cid, count in st.counts.items():
        theta = st.components[cid]
        terms.append(math.log(count) - log_denom + joint_log_density_all_classes(X, theta, X1))
    if n_g0_draws:
        batch = draw_g0(rng, sample.hyper, prior, composition, n_g0_draws)
        log_w = math.log(gamma) - log_denom - math.log(n_g0_draws)
        for k in range(n_g0_draws):
            terms.append(log_w + joint_log_density_all_classes(X, batch[k], X1))
    if not terms:
        raise ModelError("sample has no components and no baseline draws")
    out = logsumexp(np.stack(terms), axis=0)
    if np.isnan(out).any():
        raise ModelError("NaN in predictive density")
    return out


def conditional_class_probs(X, sample: PosteriorSample) -> np.ndarray:
    """``P(y' | x', sample)`` for a single-component (linear) model."""
    X, X1 = _design(X)
    (theta,) = sample.state.components.values()
    logits = X1 @ theta.weights().T
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def posterior_predictive(
    X,
    samples,
    prior: PriorSpec,
    composition,
    n_g0_draws: int = 10,
    rng=None,
    conditional: bool = False,
) -> PredictiveReport:
    """Pool samples (from any number of chains) into predictive probabilities.

    The joint densities are averaged over samples first and then normalised,
    ``P(y'=j | x') = sum_s P_s(y'=j, x') / sum_s P_s(x')``.  With
    ``conditional=True`` (linear baselines, which do not model ``x``) the
    per-sample conditional probabilities are averaged instead.
    """
    samples = list(samples)
    if not samples:
        raise ModelError("need at least one posterior sample")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if conditional:
        probs = sum(conditional_class_probs(X, s) for s in samples) / len(samples)
        probs /= probs.sum(axis=1, keepdims=True)
        log_px = np.full(X.shape[0], np.nan)
    else:
        if rng is None:
            rng = np.random.default_rng(0)
        total = None
        for s in samples:
            lj = predictive_log_joint(X, s, prior, composition, n_g0_draws, rng)
            total = lj if total is None else np.logaddexp(total, lj)
        total -= math.log(len(samples))
        log_px = logsumexp(total, axis=1)
        if np.any(np.isneginf(log_px)):
            raise ModelError("P(x') underflowed for every sample")
        probs = np.exp(total - log_px[:, None])
    labels = np.argmax(probs, axis=1) + 1
    return PredictiveReport(probs=probs, labels=labels, log_px=log_px)


def average_of_ratios(X, samples, prior, composition, n_g0_draws=0, rng=None) -> np.ndarray:
    """Mean over samples of per-sample normalised probabilities.

    Not the posterior predictive; kept to document how it differs.
    """
    out = 0.0
    for s in samples:
        lj = predictive_log_joint(X, s, prior, composition, n_g0_draws, rng)
        out = out + np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
    return out / len(samples)


def write_predictions(report: PredictiveReport, path, case_ids=None) -> None:
    """Tab-separated: case id, J probabilities, predicted label."""
    m, J = report.probs.shape
    ids = range(1, m + 1) if case_ids is None else case_ids
    with open(path, "w") as fh:
        fh.write("\t".join(["case"] + [f"p{j}" for j in range(1, J + 1)] + ["predicted"]) + "\n")
        for cid, row, lab in zip(ids, report.probs, report.labels):
            fh.write("\t".join([str(cid)] + [repr(float(v)) for v in row] + [str(int(lab))]) + "\n")


def read_predictions(path):
    """Returns ``(case_ids, probs, labels)``."""
    ids, probs, labels = [], [], []
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if not header or header[0] != "case" or header[-1] != "predicted":
            raise ValueError(f"{path}: not a prediction file")
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
            ids.append(parts[0])
            probs.append([float(v) for v in parts[1:-1]])
            labels.append(int(parts[-1]))
    return ids, np.array(probs), np.array(labels)
