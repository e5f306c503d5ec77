"""Closed-form model mathematics for Dirichlet process mixtures of MNL experts.

Everything here is a pure function of its inputs.  Densities are returned in
log space.  Class labels are 1-based at the public surface (``1..J``) and
0-based internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

LOG_2PI = math.log(2.0 * math.pi)


class ModelError(ValueError):
    """Raised on invalid model inputs (non-finite values, bad scales, bad trees)."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ClassHierarchy:
    """Rooted class tree whose leaves are the ``J`` classes.

    Attributes
    ----------
    branches : list of (parent, child) node names
        One entry per edge.  Leaves are named by their integer label.
    paths : list of list of int
        ``paths[j]`` holds the branch indices on the root-to-leaf path of
        class ``j + 1``.
    leaf_to_parent : dict
        Maps each leaf label to the name of its immediate parent node.
    phi : ndarray of shape (n_branches, p + 1), optional
        Branch parameters; column 0 is the intercept slice.
    """

    branches: list
    paths: list
    leaf_to_parent: dict
    phi: np.ndarray | None = None
    root: str = "root"

    def __post_init__(self):
        n_branches = len(self.branches)
        for j, path in enumerate(self.paths):
            if not path:
                raise ModelError(f"class {j + 1} has an empty root-to-leaf path")
            if any(b < 0 or b >= n_branches for b in path):
                raise ModelError(f"class {j + 1} path references an unknown branch")
        if len(self.leaf_to_parent) != len(self.paths):
            raise ModelError("leaf_to_parent must list every leaf exactly once")

    @property
    def n_classes(self) -> int:
        return len(self.paths)

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    def composition_matrix(self) -> np.ndarray:
        """0/1 matrix ``A`` of shape (J, B) with ``A[j, b] = 1`` iff branch b
        lies on the path to class ``j + 1``."""
        A = np.zeros((self.n_classes, self.n_branches))
        for j, path in enumerate(self.paths):
            A[j, path] = 1.0
        return A

    def is_flat(self) -> bool:
        return self.n_branches == self.n_classes and np.array_equal(
            self.composition_matrix(), np.eye(self.n_classes)
        )

    @classmethod
    def flat(cls, n_classes: int) -> "ClassHierarchy":
        """All leaves directly under the root; composition is the identity."""
        return cls(
            branches=[("root", str(j + 1)) for j in range(n_classes)],
            paths=[[j] for j in range(n_classes)],
            leaf_to_parent={j + 1: "root" for j in range(n_classes)},
        )


@dataclass(eq=False)
class Dataset:
    """Covariates and 1-based class labels.

    ``sources`` holds 0-based half-open column ranges ``(start, stop)``.
    """

    x: np.ndarray
    y: np.ndarray
    n_classes: int
    sources: list | None = None
    hierarchy: ClassHierarchy | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x.reshape(-1, 1) if self.x.size else self.x.reshape(0, 0)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if self.x.shape[0] != self.y.shape[0]:
            raise ModelError(
                f"x has {self.x.shape[0]} rows but y has {self.y.shape[0]} labels"
            )
        if self.n_classes < 1:
            raise ModelError("n_classes must be positive")
        if self.y.size and (self.y.min() < 1 or self.y.max() > self.n_classes):
            raise ModelError(f"labels must lie in 1..{self.n_classes}")
        if self.sources is not None:
            self.sources = [tuple(int(v) for v in s) for s in self.sources]
            check_sources(self.sources, self.p)
        if self.hierarchy is not None and self.hierarchy.n_classes != self.n_classes:
            raise ModelError(
                f"hierarchy has {self.hierarchy.n_classes} leaves, "
                f"expected {self.n_classes}"
            )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def source_index(self) -> np.ndarray:
        """Source id of every covariate (all zeros when there are no blocks)."""
        out = np.zeros(self.p, dtype=np.int64)
        for s, (start, stop) in enumerate(self.sources or [(0, self.p)]):
            out[start:stop] = s
        return out

    @property
    def n_sources(self) -> int:
        return len(self.sources) if self.sources else 1

    def subset(self, rows) -> "Dataset":
        return replace(self, x=self.x[rows], y=self.y[rows])


def check_sources(sources: Sequence[tuple], p: int) -> None:
    """Source blocks must be disjoint and tile ``0..p`` exactly."""
    covered = np.zeros(p, dtype=int)
    for start, stop in sources:
        if not 0 <= start < stop <= p:
            raise ModelError(f"source range [{start}, {stop}) outside 0..{p}")
        covered[start:stop] += 1
    if not np.all(covered == 1):
        raise ModelError("source ranges must be disjoint and cover every covariate")


@dataclass(frozen=True)
class PriorSpec:
    """Baseline-distribution parameters and hyperprior constants.

    Scale hyperparameters carry normal priors on their log variance
    (``*_logvar_mean``, ``*_logvar_sd``).  The concentration prior is on
    ``log(gamma)`` and the local component scales ``nu_c``, ``tau_c`` have
    ``N(local_log_mean, local_log_sd**2)`` priors on their logs.

    Defaults are the protein-fold settings; :meth:`simulation` gives the
    synthetic-data preset.
    """

    mu0_mean: float = 0.0
    mu0_sd: float = 5.0
    sigma0_logvar_mean: float = 0.0
    sigma0_logvar_sd: float = 2.0
    msigma_mean: float = 0.0
    msigma_sd: float = 1.0
    vsigma_logvar_mean: float = 0.0
    vsigma_logvar_sd: float = 2.0
    eta_logvar_mean: float = 0.0
    eta_logvar_sd: float = 2.0
    xi_logvar_mean: float = 0.0
    xi_logvar_sd: float = 1.0
    ard_logvar_mean: float = -3.0
    ard_logvar_sd: float = 4.0
    local_log_mean: float = 0.0
    local_log_sd: float = 1.0
    gamma_log_mean: float = -3.0
    gamma_log_sd: float = 2.0
    ard_enabled: bool = True
    per_covariate_g0: bool = True
    sample_g0_hyper: bool = True

    def __post_init__(self):
        for name in (
            "mu0_sd",
            "sigma0_logvar_sd",
            "msigma_sd",
            "vsigma_logvar_sd",
            "eta_logvar_sd",
            "xi_logvar_sd",
            "ard_logvar_sd",
            "local_log_sd",
            "gamma_log_sd",
        ):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ModelError(f"{name} must be a positive finite number, got {value}")

    @classmethod
    def simulation(cls, **overrides) -> "PriorSpec":
        """Synthetic-data preset: no ARD, log(eta) ~ N(0, 1), log(xi) ~ N(0, 2^2)."""
        settings = dict(
            eta_logvar_mean=0.0,
            eta_logvar_sd=2.0,
            xi_logvar_mean=0.0,
            xi_logvar_sd=4.0,
            ard_enabled=False,
        )
        settings.update(overrides)
        return cls(**settings)


@dataclass(eq=False)
class HyperState:
    """Current values of all sampled hyperparameters (stored as scales).

    ``source_of`` maps each covariate to its source block and thereby to its
    entry of ``xi``.  ``ard`` is fixed at ones when ARD is disabled.
    """

    mu0: np.ndarray
    sigma0: np.ndarray
    m_sigma: np.ndarray
    v_sigma: np.ndarray
    eta: float
    xi: np.ndarray
    ard: np.ndarray
    gamma: float
    source_of: np.ndarray

    @classmethod
    def initial(cls, prior: PriorSpec, p: int, source_of=None) -> "HyperState":
        """Prior medians."""
        source_of = (
            np.zeros(p, dtype=np.int64)
            if source_of is None
            else np.asarray(source_of, dtype=np.int64)
        )
        n_sources = int(source_of.max()) + 1 if p else 1
        ard = math.exp(prior.ard_logvar_mean / 2) if prior.ard_enabled else 1.0
        return cls(
            mu0=np.full(p, prior.mu0_mean),
            sigma0=np.full(p, math.exp(prior.sigma0_logvar_mean / 2)),
            m_sigma=np.full(p, prior.msigma_mean),
            v_sigma=np.full(p, math.exp(prior.vsigma_logvar_mean / 2)),
            eta=math.exp(prior.eta_logvar_mean / 2),
            xi=np.full(n_sources, math.exp(prior.xi_logvar_mean / 2)),
            ard=np.full(p, ard),
            gamma=math.exp(prior.gamma_log_mean),
            source_of=source_of,
        )

    def copy(self) -> "HyperState":
        return HyperState(
            mu0=self.mu0.copy(),
            sigma0=self.sigma0.copy(),
            m_sigma=self.m_sigma.copy(),
            v_sigma=self.v_sigma.copy(),
            eta=self.eta,
            xi=self.xi.copy(),
            ard=self.ard.copy(),
            gamma=self.gamma,
            source_of=self.source_of,
        )

    def coef_scale(self) -> np.ndarray:
        """Global part of the coefficient prior sd per covariate, ``xi_s * sigma_l``."""
        return self.xi[self.source_of] * self.ard

    def validate(self) -> None:
        scales = [self.sigma0, self.v_sigma, self.xi, self.ard, [self.eta, self.gamma]]
        for arr in scales:
            arr = np.asarray(arr, dtype=float)
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise ModelError("hyperparameter scales must be positive and finite")


@dataclass(eq=False)
class ComponentParams:
    """One mixture component.

    The MNL expert is stored as branch parameters ``phi`` of shape
    (B, p + 1) together with the (J, B) composition matrix.  A flat expert
    uses the identity composition, so ``phi`` row ``j`` is exactly
    ``(alpha_j, beta[:, j])``.
    """

    mu: np.ndarray
    sigma: np.ndarray
    phi: np.ndarray
    nu_c: float
    tau_c: float
    composition: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.sigma) <= 0) or self.nu_c <= 0 or self.tau_c <= 0:
            raise ModelError("sigma, nu_c and tau_c must be strictly positive")

    @classmethod
    def flat(cls, mu, sigma, alpha, beta, nu_c=1.0, tau_c=1.0) -> "ComponentParams":
        alpha = np.asarray(alpha, dtype=float)
        beta = np.asarray(beta, dtype=float).reshape(-1, alpha.size)
        phi = np.column_stack([alpha, beta.T])
        return cls(
            mu=np.asarray(mu, dtype=float),
            sigma=np.asarray(sigma, dtype=float),
            phi=phi,
            nu_c=float(nu_c),
            tau_c=float(tau_c),
            composition=np.eye(alpha.size),
        )

    def weights(self) -> np.ndarray:
        """Composed per-class weights ``W`` (J, p + 1); ``W[:, 0]`` is alpha."""
        return self.composition @ self.phi

    @property
    def alpha(self) -> np.ndarray:
        return self.weights()[:, 0]

    @property
    def beta(self) -> np.ndarray:
        """Coefficients as a (p, J) matrix."""
        return self.weights()[:, 1:].T

    def copy(self) -> "ComponentParams":
        return replace(self)


@dataclass(eq=False)
class MixtureState:
    """CRP assignment of observations to occupied components.

    ``loglik`` optionally caches, per component, the joint log density of
    every observation under that component's parameters.
    """

    assign: np.ndarray
    components: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    loglik: dict = field(default_factory=dict)
    next_id: int = 0

    @classmethod
    def single(cls, n: int, theta, loglik=None) -> "MixtureState":
        state = cls(assign=np.full(n, -1, dtype=np.int64))
        if n:
            cid = state.add(theta, loglik)
            state.assign[:] = cid
            state.counts[cid] = n
        return state

    @property
    def n_components(self) -> int:
        return len(self.counts)

    def add(self, theta, loglik=None) -> int:
        cid = self.next_id
        self.next_id += 1
        self.components[cid] = theta
        self.counts[cid] = 0
        if loglik is not None:
            self.loglik[cid] = loglik
        return cid

    def remove(self, cid: int):
        theta = self.components.pop(cid)
        del self.counts[cid]
        cached = self.loglik.pop(cid, None)
        return theta, cached

    def members(self, cid: int) -> np.ndarray:
        return np.flatnonzero(self.assign == cid)

    def check(self) -> None:
        n_total = 0
        for cid, count in self.counts.items():
            actual = int(np.sum(self.assign == cid))
            if count <= 0 or actual != count:
                raise ModelError(f"component {cid}: stored count {count}, actual {actual}")
            n_total += count
        if n_total != self.assign.size:
            raise ModelError("component counts do not sum to n")


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------


def _require_finite(name, *arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise ModelError(f"{name}: non-finite input {np.asarray(arr)!r}")


def mnl_class_log_probs(x_row, alpha, beta) -> np.ndarray:
    """Log softmax of ``alpha_j + x . beta_j`` over the J classes.

    ``beta`` has shape (p, J).
    """
    x_row = np.asarray(x_row, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float).reshape(x_row.size, alpha.size)
    _require_finite("mnl_class_log_probs", x_row, alpha, beta)
    logits = alpha + x_row @ beta
    logits = logits - logits.max()
    return logits - math.log(np.exp(logits).sum())


def gaussian_covariate_log_density(x_row, mu, sigma) -> float:
    """Sum over covariates of independent ``N(mu_l, sigma_l^2)`` log densities."""
    x_row = np.asarray(x_row, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ModelError("sigma must be strictly positive")
    z = (x_row - mu) / sigma
    return float(-0.5 * np.dot(z, z) - np.log(sigma).sum() - 0.5 * x_row.size * LOG_2PI)


def joint_log_density(x_row, y_label: int, theta: ComponentParams) -> float:
    """``log P(x) + log P(y | x)`` under one component."""
    W = theta.weights()
    if not 1 <= y_label <= W.shape[0]:
        raise ModelError(f"label {y_label} outside 1..{W.shape[0]}")
    log_px = gaussian_covariate_log_density(x_row, theta.mu, theta.sigma)
    return log_px + mnl_class_log_probs(x_row, W[:, 0], W[:, 1:].T)[y_label - 1]


def covariate_log_density_rows(X, mu, sigma) -> np.ndarray:
    """Vectorised covariate log density for every row of ``X``."""
    z = (X - mu) / sigma
    return -0.5 * np.einsum("ij,ij->i", z, z) - (
        np.log(sigma).sum() + 0.5 * X.shape[1] * LOG_2PI
    )


def class_log_probs_rows(X1, W) -> np.ndarray:
    """Log softmax for every row.  ``X1`` carries a leading column of ones."""
    logits = X1 @ W.T
    return logits - logsumexp(logits, axis=1, keepdims=True)


def joint_log_density_all_classes(X, theta: ComponentParams, X1=None) -> np.ndarray:
    """``log P(y=j, x)`` for every row and class, shape (m, J)."""
    if X1 is None:
        X1 = np.column_stack([np.ones(X.shape[0]), X])
    log_px = covariate_log_density_rows(X, theta.mu, theta.sigma)
    return log_px[:, None] + class_log_probs_rows(X1, theta.weights())


def compose_hierarchy_coefficients(h: ClassHierarchy):
    """Per-class ``(alpha, beta)`` as path sums of branch parameters.

    Returns ``alpha`` of shape (J,) and ``beta`` of shape (p, J).
    """
    if h.phi is None:
        raise ModelError("hierarchy has no branch parameters")
    phi = np.asarray(h.phi, dtype=float)
    if phi.shape[0] != h.n_branches:
        raise ModelError(
            f"phi has {phi.shape[0]} rows but the tree has {h.n_branches} branches"
        )
    W = h.composition_matrix() @ phi
    return W[:, 0], W[:, 1:].T


def normal_logpdf(x, mean, sd):
    z = (x - mean) / sd
    return -0.5 * z * z - np.log(sd) - 0.5 * LOG_2PI


def expert_prior_sd(theta: ComponentParams, hyper: HyperState) -> np.ndarray:
    """Prior sd of every ``phi`` entry: ``eta*tau_c`` for intercepts,
    ``xi_s*sigma_l*nu_c`` for coefficients."""
    row = np.concatenate([[hyper.eta * theta.tau_c], hyper.coef_scale() * theta.nu_c])
    return np.broadcast_to(row, theta.phi.shape)


def g0_log_prior(theta: ComponentParams, hyper: HyperState, prior: PriorSpec) -> float:
    """Log density of ``theta`` under the baseline distribution.

    The density is taken over ``(mu, log sigma^2, phi, log nu_c, log tau_c)``,
    which are the coordinates the sampler moves in.
    """
    hyper.validate()
    mu = np.asarray(theta.mu, dtype=float)
    log_var = 2.0 * np.log(theta.sigma)
    total = normal_logpdf(mu, hyper.mu0, hyper.sigma0).sum()
    total += normal_logpdf(log_var, hyper.m_sigma, hyper.v_sigma).sum()
    total += normal_logpdf(theta.phi, 0.0, expert_prior_sd(theta, hyper)).sum()
    total += normal_logpdf(math.log(theta.nu_c), prior.local_log_mean, prior.local_log_sd)
    total += normal_logpdf(math.log(theta.tau_c), prior.local_log_mean, prior.local_log_sd)
    return float(total)


# ---------------------------------------------------------------------------
# Chinese restaurant process
# ---------------------------------------------------------------------------


def crp_assignment_probs(counts_minus_i, gamma: float, n_minus: int | None = None):
    """Probabilities of joining each existing component, then a new one."""
    counts = np.asarray(counts_minus_i, dtype=float)
    if np.any(counts < 0):
        raise ModelError("occupancy counts must be non-negative")
    if not gamma > 0:
        raise ModelError("gamma must be positive")
    total = counts.sum()
    if n_minus is not None and n_minus != total:
        raise ModelError(f"n_minus={n_minus} does not match sum of counts {total}")
    return np.append(counts, gamma) / (total + gamma)


def finite_mixture_assignment_probs(counts, gamma: float, n_components: int):
    """Conditional probabilities with ``C`` components and a symmetric
    Dirichlet(gamma / C) prior on the mixing proportions.

    ``counts`` lists the occupied components; the remaining
    ``C - len(counts)`` components are empty.  Returns the probabilities of the
    occupied components followed by the total probability of all empty ones.
    """
    counts = np.asarray(counts, dtype=float)
    if n_components < counts.size:
        raise ModelError("more occupied components than C")
    denom = counts.sum() + gamma
    occupied = (counts + gamma / n_components) / denom
    empty = (n_components - counts.size) * (gamma / n_components) / denom
    return np.append(occupied, empty)


def crp_partition_log_prob(partition: Iterable[Iterable[int]], gamma: float) -> float:
    """Log probability of a set partition under the CRP with concentration gamma.

    ``gamma^K prod_k (|B_k| - 1)! / prod_{i<n} (i + gamma)``.
    """
    sizes = [len(list(block)) for block in partition]
    sizes = [s for s in sizes if s > 0]
    n = sum(sizes)
    k = len(sizes)
    return float(
        k * math.log(gamma)
        + sum(gammaln(s) for s in sizes)
        - (gammaln(n + gamma) - gammaln(gamma))
    )


def partition_from_assignment(assign) -> tuple:
    """Canonical partition (tuple of sorted index tuples, ordered by first
    element) induced by an assignment vector."""
    blocks = {}
    for i, c in enumerate(assign):
        blocks.setdefault(c, []).append(i)
    return tuple(sorted(tuple(b) for b in blocks.values()))
