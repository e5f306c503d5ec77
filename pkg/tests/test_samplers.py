import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dpmnl.samplers import (
    HmcConfig,
    SliceConfig,
    check_gradient,
    hmc_update,
    leapfrog,
    make_rng,
    slice_sample_step,
    slice_transition,
)


def std_normal(x):
    return -0.5 * x * x


def std_normal_grad(x):
    return -0.5 * float(np.dot(x, x)), -np.asarray(x)


def slice_chain(log_pdf, x0, n, seed, cfg=SliceConfig()):
    rng = make_rng(seed)
    out = np.empty(n)
    x = x0
    for t in range(n):
        x = slice_sample_step(log_pdf, x, cfg, rng)
        out[t] = x
    return out


def hmc_chain(f, x0, n, seed, cfg):
    rng = make_rng(seed)
    x = np.asarray(x0, dtype=float)
    out = np.empty((n, x.size))
    accepted = 0
    for t in range(n):
        res = hmc_update(f, x, cfg, rng)
        x = res.x
        accepted += res.accepted
        out[t] = x
    return out, accepted / n


# -- RNG contract ------------------------------------------------------------------


def test_rng_reproducible_and_streams_differ():
    a = make_rng(42).random(5)
    np.testing.assert_array_equal(a, make_rng(42).random(5))
    assert not np.array_equal(a, make_rng(42, stream=1).random(5))
    with pytest.raises(ValueError):
        make_rng(-1)


def test_rng_pinned_sequence():
    # guards against silent changes of the generator construction
    first = make_rng(2024, stream=3).integers(0, 2**31, 3)
    again = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(2024, spawn_key=(3,)))
    ).integers(0, 2**31, 3)
    np.testing.assert_array_equal(first, again)


# -- slice sampling ---------------------------------------------------------------


def test_slice_normal_moments():
    xs = slice_chain(std_normal, 0.0, 50_000, seed=1)
    assert abs(xs.mean()) < 0.03
    assert abs(xs.var() - 1.0) < 0.05


def test_slice_uniform_target():
    a, b = -1.0, 2.5

    def flat(x):
        return 0.0 if a <= x <= b else -math.inf

    xs = slice_chain(flat, 0.0, 20_000, seed=2)
    assert stats.kstest(xs, stats.uniform(a, b - a).cdf).statistic < 0.02


@settings(max_examples=50, deadline=None)
@given(x0=st.floats(-5, 5), seed=st.integers(0, 2**32), width=st.floats(0.05, 10), m=st.integers(1, 30))
def test_slice_returns_point_on_slice(x0, seed, width, m):
    def f(x):
        return -abs(x) ** 1.5 + math.sin(3 * x)

    res = slice_transition(f, x0, SliceConfig(width, m), make_rng(seed))
    assert res.log_p >= res.level
    assert res.log_p == f(res.x)


def test_slice_nan_reports_offending_point():
    def f(x):
        return float("nan") if x > 0.5 else -x * x

    with pytest.raises(ValueError, match="NaN at x="):
        for seed in range(50):
            slice_transition(f, 0.0, SliceConfig(width=5.0), make_rng(seed))


def test_slice_config_validation():
    with pytest.raises(ValueError):
        SliceConfig(width=0.0)
    with pytest.raises(ValueError):
        SliceConfig(max_steps=0)


def test_slice_deterministic():
    a = slice_chain(std_normal, 0.3, 200, seed=9)
    b = slice_chain(std_normal, 0.3, 200, seed=9)
    np.testing.assert_array_equal(a, b)


# -- Hamiltonian dynamics -----------------------------------------------------------


def test_hmc_energy_conservation_small_step():
    rng = make_rng(3)
    x0 = rng.normal(size=3)
    for _ in range(20):
        res = hmc_update(std_normal_grad, x0, HmcConfig(step_size=1e-3, leapfrog_steps=10), rng)
        assert abs(res.delta_h) < 1e-5


def test_leapfrog_reversible():
    rng = make_rng(4)
    A = np.array([[2.0, 0.3], [0.3, 0.5]])

    def grad(x):
        return -A @ x - 0.1 * x**3

    x0, p0 = rng.normal(size=2), rng.normal(size=2)
    x1, p1 = leapfrog(grad, x0, p0, 0.1, 25)
    x2, p2 = leapfrog(grad, x1, -p1, 0.1, 25)
    np.testing.assert_allclose(x2, x0, atol=1e-10)
    np.testing.assert_allclose(-p2, p0, atol=1e-10)


def test_hmc_correlated_gaussian_covariance():
    cov = np.array([[1.0, 0.8], [0.8, 2.0]])
    prec = np.linalg.inv(cov)

    def f(x):
        return -0.5 * x @ prec @ x, -prec @ x

    xs, acc = hmc_chain(f, np.zeros(2), 20_000, seed=5, cfg=HmcConfig(step_size=0.3, leapfrog_steps=10))
    assert acc > 0.5
    np.testing.assert_allclose(np.cov(xs.T), cov, atol=0.05)


def test_hmc_acceptance_rate_standard_normal():
    _, acc = hmc_chain(std_normal_grad, np.zeros(1), 10_000, seed=6, cfg=HmcConfig(step_size=0.5, leapfrog_steps=10))
    assert 0.6 < acc < 1.0


def test_hmc_nonfinite_is_rejection():
    def f(x):
        if x[0] > 1.0:
            return -math.inf, np.full(1, np.nan)
        return -0.5 * x[0] ** 2, -x

    rng = make_rng(7)
    res = hmc_update(f, np.array([0.9]), HmcConfig(step_size=0.5, leapfrog_steps=5), rng)
    if not res.accepted:
        assert res.x[0] == 0.9
    rejected = 0
    x = np.array([0.9])
    for _ in range(200):
        res = hmc_update(f, x, HmcConfig(step_size=0.5, leapfrog_steps=5), rng)
        x = res.x
        rejected += not res.accepted
        assert x[0] <= 1.0
    assert rejected > 0


def test_hmc_step_scale_keeps_target():
    # a badly scaled Gaussian sampled with per-coordinate steps
    sd = np.array([0.01, 10.0])

    def f(x):
        z = x / sd
        return -0.5 * z @ z, -x / sd**2

    rng = make_rng(8)
    x = np.zeros(2)
    xs = []
    for _ in range(5000):
        x = hmc_update(f, x, HmcConfig(step_size=0.4, leapfrog_steps=10), rng, step_scale=sd).x
        xs.append(x)
    np.testing.assert_allclose(np.std(xs, axis=0) / sd, 1.0, atol=0.08)


def test_hmc_deterministic():
    cfg = HmcConfig(step_size=0.2, leapfrog_steps=5)
    a, _ = hmc_chain(std_normal_grad, np.ones(2), 100, seed=11, cfg=cfg)
    b, _ = hmc_chain(std_normal_grad, np.ones(2), 100, seed=11, cfg=cfg)
    np.testing.assert_array_equal(a, b)


def test_hmc_config_validation():
    with pytest.raises(ValueError):
        HmcConfig(step_size=0.0)
    with pytest.raises(ValueError):
        HmcConfig(leapfrog_steps=0)


# -- invariance: chi-squared goodness of fit on three 1-D targets --------------------


def bimodal_logpdf(x):
    return float(np.logaddexp(-0.5 * (x + 1.5) ** 2, -0.5 * (x - 1.5) ** 2))


def bimodal_cdf(x):
    return 0.5 * stats.norm.cdf(x, -1.5) + 0.5 * stats.norm.cdf(x, 1.5)


TARGETS = {
    # name: (log density of the sampled coordinate z, transform z -> x, cdf of x)
    "normal": (lambda z: -0.5 * z * z, lambda z: z, stats.norm.cdf),
    "exponential": (lambda z: z - math.exp(z), np.exp, stats.expon.cdf),
    "bimodal": (bimodal_logpdf, lambda z: z, bimodal_cdf),
}


def numeric_grad(f):
    def fg(x):
        h = 1e-6
        return f(x[0]), np.array([(f(x[0] + h) - f(x[0] - h)) / (2 * h)])

    return fg


def chi2_pvalue(x, cdf, bins=20):
    """Equal-probability bins under the target cdf."""
    counts = np.bincount(np.minimum((cdf(x) * bins).astype(int), bins - 1), minlength=bins)
    return stats.chisquare(counts, np.full(bins, x.size / bins)).pvalue


@pytest.mark.parametrize("name", sorted(TARGETS))
def test_slice_invariance_chi2(name):
    logpdf, transform, cdf = TARGETS[name]
    zs = slice_chain(logpdf, 0.1, 40_000, seed=12)[::20]
    assert chi2_pvalue(transform(zs), cdf) > 0.001


@pytest.mark.parametrize("name", sorted(TARGETS))
def test_hmc_invariance_chi2(name):
    logpdf, transform, cdf = TARGETS[name]
    zs, _ = hmc_chain(numeric_grad(logpdf), np.array([0.1]), 20_000, seed=13,
                      cfg=HmcConfig(step_size=0.3, leapfrog_steps=15))
    assert chi2_pvalue(transform(zs[::10, 0]), cdf) > 0.001


# -- gradient checker ---------------------------------------------------------------


def test_check_gradient_quadratic_exact():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])

    def f(x):
        return -0.5 * x @ A @ x + x.sum(), -A @ x + 1.0

    assert check_gradient(f, np.array([0.4, -1.3])) < 1e-9


def test_check_gradient_detects_corruption():
    def f(x):
        return -0.5 * x @ x, -x * 1.1

    assert check_gradient(f, np.array([1.0, 2.0])) > 1e-2
    with pytest.raises(ValueError):
        check_gradient(f, np.ones(2), h=0.0)
