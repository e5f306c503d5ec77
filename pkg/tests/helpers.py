"""Shared test utilities."""

import numpy as np

from dpmnl.model import MixtureState, partition_from_assignment


class ConstantLikelihood:
    """Likelihood double with ``F = 1`` for every observation and component."""

    def __init__(self, n):
        self.n = n

    def draw_aux(self, rng, hyper, k, i):
        return [object() for _ in range(k)], np.zeros(k)

    def loglik_all(self, theta):
        return np.zeros(self.n)


def constant_state(n):
    state = MixtureState.single(n, object(), np.zeros(n))
    return state


def batch_means_se(x, n_batches=50):
    """Monte Carlo standard error of the mean of an autocorrelated series."""
    x = np.asarray(x, dtype=float)
    size = x.size // n_batches
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return means.std(ddof=1) / np.sqrt(n_batches)


def partition_frequencies(assign_trace):
    counts = {}
    for a in assign_trace:
        key = partition_from_assignment(a)
        counts[key] = counts.get(key, 0) + 1
    total = sum(counts.values())
    return {k: v / total for k, v in counts.items()}
