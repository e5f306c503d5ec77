"""Generic MCMC kernels: univariate slice sampling and Hamiltonian dynamics.

Every kernel draws its randomness from an explicit ``numpy.random.Generator``
so a chain is reproducible from its seed alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """PCG64 stream ``stream`` derived from ``seed``.

    Distinct streams of one seed are statistically independent and the draw
    sequence is identical across runs and platforms.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class SliceConfig:
    width: float = 1.0
    max_steps: int = 20

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("slice width must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


@dataclass(frozen=True)
class HmcConfig:
    step_size: float = 0.05
    leapfrog_steps: int = 20
    mass: float = 1.0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be at least 1")
        if not self.mass > 0:
            raise ValueError("mass must be positive")


class SliceResult(NamedTuple):
    x: float
    log_p: float
    level: float
    n_evals: int


class HmcResult(NamedTuple):
    x: np.ndarray
    accepted: bool
    log_p: float
    delta_h: float


def _checked(log_pdf, x):
    value = log_pdf(x)
    if value != value:
        raise ValueError(f"log density is NaN at x={x!r}")
    return value


def slice_transition(
    log_pdf: Callable[[float], float],
    x0: float,
    cfg: SliceConfig,
    rng: np.random.Generator,
    log_p0: float | None = None,
) -> SliceResult:
    """One stepping-out / shrinkage slice-sampling update.

    The interval is expanded at most ``cfg.max_steps`` widths in total, the
    budget being split at random between the two ends.
    """
    if log_p0 is None:
        log_p0 = _checked(log_pdf, x0)
    if not math.isfinite(log_p0):
        raise ValueError(f"log density at the current point x={x0!r} is {log_p0}")
    level = log_p0 - rng.standard_exponential()
    w = cfg.width
    left = x0 - w * rng.random()
    right = left + w
    j = int(math.floor(cfg.max_steps * rng.random()))
    k = cfg.max_steps - 1 - j
    n_evals = 0
    while j > 0:
        n_evals += 1
        if _checked(log_pdf, left) < level:
            break
        left -= w
        j -= 1
    while k > 0:
        n_evals += 1
        if _checked(log_pdf, right) < level:
            break
        right += w
        k -= 1
    while True:
        x1 = left + rng.random() * (right - left)
        n_evals += 1
        log_p1 = _checked(log_pdf, x1)
        if log_p1 >= level:
            return SliceResult(x1, log_p1, level, n_evals)
        if x1 < x0:
            left = x1
        elif x1 > x0:
            right = x1
        else:
            # interval collapsed onto x0 through rounding
            return SliceResult(x0, log_p0, level, n_evals)


def slice_sample_step(log_pdf, x0: float, cfg: SliceConfig, rng) -> float:
    """Return the next state of a univariate slice-sampling chain."""
    return slice_transition(log_pdf, x0, cfg, rng).x


def leapfrog(grad_fn, x, p, step, n_steps: int, mass: float = 1.0):
    """``n_steps`` leapfrog steps of size ``step`` (scalar or per coordinate).

    ``grad_fn`` returns the gradient of the log density.  Returns the end
    point ``(x, p)``.
    """
    x = np.array(x, dtype=float)
    p = np.array(p, dtype=float)
    p += 0.5 * step * grad_fn(x)
    for s in range(n_steps):
        x += step * p / mass
        g = grad_fn(x)
        if s < n_steps - 1:
            p += step * g
    p += 0.5 * step * g
    return x, p


def hmc_update(
    log_pdf_and_grad: Callable[[np.ndarray], tuple],
    x0: np.ndarray,
    cfg: HmcConfig,
    rng: np.random.Generator,
    step_scale: np.ndarray | None = None,
    current: tuple | None = None,
) -> HmcResult:
    """One Hamiltonian Monte Carlo transition.

    Parameters
    ----------
    log_pdf_and_grad : callable
        Maps a position to ``(log density, gradient)``.
    step_scale : ndarray, optional
        Per-coordinate multipliers of ``cfg.step_size``.  Fixed multipliers
        are equivalent to a diagonal mass matrix and keep the target
        invariant.  ``None`` means identity scaling.
    current : tuple, optional
        Cached ``log_pdf_and_grad(x0)``.

    A non-finite Hamiltonian at the end point counts as a rejection.
    """
    x0 = np.asarray(x0, dtype=float)
    step = cfg.step_size if step_scale is None else cfg.step_size * step_scale
    mass = cfg.mass
    logp0, grad0 = log_pdf_and_grad(x0) if current is None else current
    if not math.isfinite(logp0):
        raise ValueError("HMC started from a point with non-finite log density")

    p0 = rng.standard_normal(x0.shape) * math.sqrt(mass)
    h0 = -logp0 + 0.5 * np.dot(p0, p0) / mass

    x = x0.copy()
    p = p0 + 0.5 * step * grad0
    logp, grad = logp0, grad0
    finite = True
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(cfg.leapfrog_steps):
            x += step * p / mass
            logp, grad = log_pdf_and_grad(x)
            if not (math.isfinite(logp) and np.all(np.isfinite(grad))):
                finite = False
                break
            if s < cfg.leapfrog_steps - 1:
                p += step * grad
    if finite:
        p += 0.5 * step * grad
        h1 = -logp + 0.5 * np.dot(p, p) / mass
        delta_h = h1 - h0
    else:
        delta_h = math.inf
    if not math.isfinite(delta_h):
        accept = False
    else:
        accept = delta_h <= 0 or rng.random() < math.exp(-delta_h)
    if accept:
        return HmcResult(x, True, logp, delta_h)
    return HmcResult(x0, False, logp0, delta_h)


def check_gradient(log_pdf_and_grad, x, h: float = 1e-5, floor: float = 1.0) -> float:
    """Largest coordinatewise discrepancy between the analytic gradient and
    central finite differences.

    Each discrepancy is divided by ``max(|analytic|, |numeric|, floor)``, so
    it is a relative error for entries larger than ``floor`` and an absolute
    error below it.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    _, grad = log_pdf_and_grad(x)
    grad = np.asarray(grad, dtype=float)
    worst = 0.0
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        numeric = (log_pdf_and_grad(x + e)[0] - log_pdf_and_grad(x - e)[0]) / (2 * h)
        analytic = grad.flat[k]
        denom = max(abs(analytic), abs(numeric), floor)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
