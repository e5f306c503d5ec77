"""Posterior sampling for Dirichlet process mixtures of MNL experts.

A sweep updates, in order: every observation's component assignment
(auxiliary-parameter Gibbs sampling for non-conjugate mixtures), the parameters of
every occupied component, the baseline-distribution hyperparameters, and the
concentration parameter.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import (
    LOG_2PI,
    ComponentParams,
    Dataset,
    HyperState,
    MixtureState,
    ModelError,
    PriorSpec,
    ClassHierarchy,
    expert_prior_sd,
)
from .samplers import HmcConfig, SliceConfig, hmc_update, make_rng, slice_transition

logger = logging.getLogger(__name__)


class EngineError(RuntimeError):
    """A chain hit a NaN or an inconsistent state."""


@dataclass(frozen=True)
class ChainConfig:
    n_iterations: int = 2000
    burn_in: int = 200
    thin: int = 1
    n_chains: int = 1
    seed: int = 0
    aux_m: int = 3
    slice: SliceConfig = field(default_factory=SliceConfig)
    hmc: HmcConfig = field(default_factory=lambda: HmcConfig(step_size=0.5))
    hmc_updates: int = 1
    # per-coordinate HMC step sizes from the prior scale and member data
    scaled_steps: bool = True
    single_component: bool = False
    n_g0_draws: int = 10

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be at least 1")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_iterations")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")
        if self.aux_m < 1:
            raise ValueError("aux_m must be at least 1")
        if self.hmc_updates < 1:
            raise ValueError("hmc_updates must be at least 1")
        if self.n_g0_draws < 0:
            raise ValueError("n_g0_draws must be non-negative")

    def retained_iterations(self) -> list:
        return list(range(self.burn_in + self.thin, self.n_iterations + 1, self.thin))


@dataclass(eq=False)
class PosteriorSample:
    state: MixtureState
    hyper: HyperState
    iteration: int
    chain: int
    log_lik: float = 0.0


# ---------------------------------------------------------------------------
# Baseline-distribution draws
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class G0Batch:
    """``k`` component parameter sets drawn together, stored as stacked arrays."""

    mu: np.ndarray  # (k, p)
    sigma: np.ndarray  # (k, p)
    phi: np.ndarray  # (k, B, p + 1)
    nu: np.ndarray  # (k,)
    tau: np.ndarray  # (k,)
    composition: np.ndarray

    def __len__(self):
        return self.nu.size

    def __getitem__(self, k) -> ComponentParams:
        return ComponentParams(
            mu=self.mu[k],
            sigma=self.sigma[k],
            phi=self.phi[k],
            nu_c=float(self.nu[k]),
            tau_c=float(self.tau[k]),
            composition=self.composition,
        )

    def weights(self) -> np.ndarray:
        return np.matmul(self.composition, self.phi)


def draw_g0(rng, hyper: HyperState, prior: PriorSpec, composition, k: int) -> G0Batch:
    """Draw ``k`` components from the baseline distribution."""
    p = hyper.mu0.size
    n_branches = composition.shape[1]
    z = rng.standard_normal((k, 2 * p + 2 + n_branches * (p + 1)))
    mu = hyper.mu0 + hyper.sigma0 * z[:, :p]
    sigma = np.exp(0.5 * (hyper.m_sigma + hyper.v_sigma * z[:, p : 2 * p]))
    nu = np.exp(prior.local_log_mean + prior.local_log_sd * z[:, 2 * p])
    tau = np.exp(prior.local_log_mean + prior.local_log_sd * z[:, 2 * p + 1])
    coef = hyper.coef_scale()
    sd = np.empty((k, 1, p + 1))
    sd[:, 0, 0] = hyper.eta * tau
    sd[:, 0, 1:] = coef[None, :] * nu[:, None]
    phi = z[:, 2 * p + 2 :].reshape(k, n_branches, p + 1) * sd
    return G0Batch(mu, sigma, phi, nu, tau, composition)


# ---------------------------------------------------------------------------
# Component likelihoods
# ---------------------------------------------------------------------------


def _log_softmax_rows(logits):
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class MnlLikelihood:
    """Joint likelihood of ``(x, y)`` under Gaussian-covariate MNL components.

    Works for flat and hierarchical experts alike; a flat expert simply uses
    the identity composition matrix.
    """

    def __init__(self, data: Dataset, prior: PriorSpec, composition=None):
        self.prior = prior
        self.n_classes = data.n_classes
        self.composition = (
            np.eye(data.n_classes) if composition is None else np.asarray(composition, float)
        )
        if self.composition.shape[0] != data.n_classes:
            raise ModelError("composition matrix rows must equal the number of classes")
        self.set_data(data.x, data.y)

    def set_data(self, x, y):
        self.x = np.asarray(x, dtype=float)
        self.y0 = np.asarray(y, dtype=np.int64) - 1
        self.n, self.p = self.x.shape
        self.x1 = np.column_stack([np.ones(self.n), self.x])
        self.onehot = np.eye(self.n_classes)[self.y0]

    def draw(self, rng, hyper, k):
        return draw_g0(rng, hyper, self.prior, self.composition, k)

    def draw_aux(self, rng, hyper, k, i):
        """``k`` fresh components and their log likelihoods for observation i."""
        batch = self.draw(rng, hyper, k)
        z = (self.x[i] - batch.mu) / batch.sigma
        log_px = -0.5 * np.einsum("kl,kl->k", z, z) - np.log(batch.sigma).sum(axis=1)
        logits = batch.weights() @ self.x1[i]
        log_py = _log_softmax_rows(logits)[:, self.y0[i]]
        return batch, log_px + log_py - 0.5 * self.p * LOG_2PI

    def loglik_all(self, theta: ComponentParams) -> np.ndarray:
        z = (self.x - theta.mu) / theta.sigma
        log_px = -0.5 * np.einsum("il,il->i", z, z) - (
            np.log(theta.sigma).sum() + 0.5 * self.p * LOG_2PI
        )
        logits = self.x1 @ theta.weights().T
        log_py = _log_softmax_rows(logits)[np.arange(self.n), self.y0]
        return log_px + log_py

    def initial_component(self) -> ComponentParams:
        """Component fitted to the whole data: sample moments, zero expert."""
        mu = self.x.mean(axis=0) if self.n else np.zeros(self.p)
        sd = self.x.std(axis=0) if self.n > 1 else np.ones(self.p)
        sd = np.where(sd > 0, sd, 1.0)
        return ComponentParams(
            mu=mu,
            sigma=sd,
            phi=np.zeros((self.composition.shape[1], self.p + 1)),
            nu_c=1.0,
            tau_c=1.0,
            composition=self.composition,
        )


# ---------------------------------------------------------------------------
# Assignment update
# ---------------------------------------------------------------------------


def update_assignment(i, state: MixtureState, gamma, aux_m, likelihood, hyper, rng):
    """Reassign observation ``i`` by one algorithm-8 Gibbs step.

    ``likelihood`` supplies ``draw_aux(rng, hyper, k, i)`` and
    ``loglik_all(theta)``; ``state.loglik`` must cache, for each occupied
    component, the log likelihood of every observation.
    """
    c_old = state.assign[i]
    state.counts[c_old] -= 1
    reused = None
    if state.counts[c_old] == 0:
        # i was a singleton: its parameters become the first auxiliary
        reused = state.remove(c_old)
        n_fresh = aux_m - 1
    else:
        n_fresh = aux_m
    state.assign[i] = -1

    ids = list(state.counts)
    n_old = len(ids)
    logw = np.empty(n_old + aux_m)
    for k, c in enumerate(ids):
        logw[k] = math.log(state.counts[c]) + state.loglik[c][i]
    if n_fresh:
        fresh, fresh_ll = likelihood.draw_aux(rng, hyper, n_fresh, i)
    else:
        fresh, fresh_ll = None, ()
    log_new = math.log(gamma / aux_m)
    offset = n_old
    if reused is not None:
        logw[offset] = log_new + reused[1][i]
        offset += 1
    logw[offset:] = log_new + np.asarray(fresh_ll)
    if np.isnan(logw).any():
        raise EngineError(f"NaN assignment weight for observation {i}: {logw!r}")

    top = logw.max()
    if top == -math.inf:
        raise EngineError(f"observation {i} has zero likelihood under every component")
    w = np.exp(logw - top)
    cum = np.cumsum(w)
    k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    k = min(k, logw.size - 1)

    if k < n_old:
        c_new = ids[k]
    elif reused is not None and k == n_old:
        c_new = state.add(reused[0], reused[1])
    else:
        theta = fresh[k - offset]
        c_new = state.add(theta, likelihood.loglik_all(theta))
    state.assign[i] = c_new
    state.counts[c_new] += 1
    return c_new


# ---------------------------------------------------------------------------
# Chain
# ---------------------------------------------------------------------------


def _gauss_logvar_target(prior_mean, prior_sd, count, sum_sq):
    """Log conditional of ``w = log s^2`` with a normal prior on ``w`` and
    ``count`` zero-mean normal observations with sum of squares ``sum_sq``."""

    def f(w):
        d = (w - prior_mean) / prior_sd
        return -0.5 * d * d - 0.5 * count * w - 0.5 * sum_sq * math.exp(-w)

    return f


def _gauss_mean_target(prior_mean, prior_sd, count, s1, s2, var):
    """Log conditional of a normal mean given ``count`` observations with
    sums ``s1``, ``s2`` and known variance ``var``."""

    def f(m):
        d = (m - prior_mean) / prior_sd
        return -0.5 * d * d - 0.5 * (s2 - 2.0 * m * s1 + count * m * m) / var

    return f


class Chain:
    """One Markov chain over mixture state and hyperparameters."""

    def __init__(
        self,
        data: Dataset,
        prior: PriorSpec,
        config: ChainConfig,
        chain_id: int = 0,
        hierarchy: ClassHierarchy | None = None,
    ):
        self.prior = prior
        self.config = config
        self.chain_id = chain_id
        composition = hierarchy.composition_matrix() if hierarchy is not None else None
        self.likelihood = MnlLikelihood(data, prior, composition)
        self.rng = make_rng(config.seed, chain_id)
        self.hyper = HyperState.initial(prior, data.p, data.source_index())
        if data.n:
            theta = self.likelihood.initial_component()
            self.state = MixtureState.single(data.n, theta, self.likelihood.loglik_all(theta))
        else:
            self.state = MixtureState(assign=np.zeros(0, dtype=np.int64))
        self.n_hmc = 0
        self.n_hmc_accepted = 0

    @property
    def n(self) -> int:
        return self.likelihood.n

    # -- data replacement (joint-distribution tests) -----------------------

    def set_data(self, x, y):
        self.likelihood.set_data(x, y)
        for cid, theta in self.state.components.items():
            self.state.loglik[cid] = self.likelihood.loglik_all(theta)

    # -- updates ------------------------------------------------------------

    def update_assignments(self):
        for i in range(self.n):
            update_assignment(
                i,
                self.state,
                self.hyper.gamma,
                self.config.aux_m,
                self.likelihood,
                self.hyper,
                self.rng,
            )

    def _slice(self, f, x0):
        return slice_transition(f, x0, self.config.slice, self.rng).x

    def expert_target(self, cid):
        """Log conditional posterior of a component's expert parameters (up to
        a constant) and its gradient, as a function of the flattened ``phi``."""
        lik = self.likelihood
        theta = self.state.components[cid]
        idx = self.state.members(cid)
        X1 = lik.x1[idx]
        Y = lik.onehot[idx]
        A = lik.composition
        shape = theta.phi.shape
        inv_var = 1.0 / expert_prior_sd(theta, self.hyper) ** 2

        def target(vec):
            phi = vec.reshape(shape)
            W = A @ phi
            logits = X1 @ W.T
            m = logits.max(axis=1, keepdims=True)
            e = np.exp(logits - m)
            s = e.sum(axis=1, keepdims=True)
            lse = m + np.log(s)
            ll = float(np.sum(logits * Y) - lse.sum())
            grad_w = (Y - e / s).T @ X1
            scaled = phi * inv_var
            lp = ll - 0.5 * float(np.sum(phi * scaled))
            grad = A.T @ grad_w - scaled
            return lp, grad.ravel()

        return target

    def expert_step_scale(self, cid):
        theta = self.state.components[cid]
        X1 = self.likelihood.x1[self.state.members(cid)]
        curvature = 1.0 / expert_prior_sd(theta, self.hyper) ** 2 + 0.25 * (X1 * X1).sum(axis=0)
        return (1.0 / np.sqrt(curvature)).ravel()

    def update_component(self, cid):
        """HMC on the expert, then slice updates of the covariate means, log
        variances and the local scales; refreshes the likelihood cache."""
        theta = self.state.components[cid]
        hyper = self.hyper
        cfg = self.config

        target = self.expert_target(cid)
        scale = self.expert_step_scale(cid) if cfg.scaled_steps else None
        vec = theta.phi.ravel()
        current = target(vec)
        if not math.isfinite(current[0]):
            raise EngineError(f"component {cid}: non-finite expert log posterior")
        for _ in range(cfg.hmc_updates):
            res = hmc_update(target, vec, cfg.hmc, self.rng, step_scale=scale, current=current)
            self.n_hmc += 1
            if res.accepted:
                self.n_hmc_accepted += 1
                vec = res.x
                current = target(vec)
        phi = vec.reshape(theta.phi.shape)

        X = self.likelihood.x[self.state.members(cid)]
        count = X.shape[0]
        s1 = X.sum(axis=0)
        s2 = (X * X).sum(axis=0)
        mu = theta.mu.copy()
        sigma = theta.sigma.copy()
        for l in range(mu.size):
            f = _gauss_mean_target(
                hyper.mu0[l], hyper.sigma0[l], count, s1[l], s2[l], sigma[l] ** 2
            )
            mu[l] = self._slice(f, mu[l])
        ss = ((X - mu) ** 2).sum(axis=0)
        for l in range(mu.size):
            f = _gauss_logvar_target(hyper.m_sigma[l], hyper.v_sigma[l], count, ss[l])
            sigma[l] = math.exp(0.5 * self._slice(f, 2.0 * math.log(sigma[l])))

        coef = phi[:, 1:] / hyper.coef_scale()
        nu_c = self._local_scale(theta.nu_c, coef.size, float(np.sum(coef * coef)))
        icpt = phi[:, 0] / hyper.eta
        tau_c = self._local_scale(theta.tau_c, icpt.size, float(np.sum(icpt * icpt)))

        new = ComponentParams(
            mu=mu, sigma=sigma, phi=phi, nu_c=nu_c, tau_c=tau_c, composition=theta.composition
        )
        self.state.components[cid] = new
        self.state.loglik[cid] = self.likelihood.loglik_all(new)

    def _local_scale(self, value, count, sum_sq):
        """Slice update of a local scale ``s`` with ``log s ~ N(m, sd^2)`` and
        ``count`` entries distributed ``N(0, (g s)^2)`` (``sum_sq`` already
        divided by ``g^2``)."""
        m, sd = self.prior.local_log_mean, self.prior.local_log_sd

        def f(u):
            d = (u - m) / sd
            return -0.5 * d * d - count * u - 0.5 * sum_sq * math.exp(-2.0 * u)

        return math.exp(self._slice(f, math.log(value)))

    def update_hyperparams(self):
        """Slice updates of the baseline-distribution hyperparameters given all
        occupied components."""
        prior = self.prior
        hyper = self.hyper
        comps = list(self.state.components.values())
        p = hyper.mu0.size
        n_comp = len(comps)
        if n_comp:
            MU = np.array([c.mu for c in comps])
            LV = 2.0 * np.log(np.array([c.sigma for c in comps]))
            PHI = np.array([c.phi for c in comps])
            NU = np.array([c.nu_c for c in comps])
            TAU = np.array([c.tau_c for c in comps])
        else:
            MU = LV = np.zeros((0, p))
            PHI = np.zeros((0, 1, p + 1))
            NU = TAU = np.zeros(0)
        n_branches = PHI.shape[1]

        if prior.sample_g0_hyper:
            self._update_location_scale(
                MU,
                hyper.mu0,
                hyper.sigma0,
                (prior.mu0_mean, prior.mu0_sd),
                (prior.sigma0_logvar_mean, prior.sigma0_logvar_sd),
            )
            self._update_location_scale(
                LV,
                hyper.m_sigma,
                hyper.v_sigma,
                (prior.msigma_mean, prior.msigma_sd),
                (prior.vsigma_logvar_mean, prior.vsigma_logvar_sd),
            )

        # intercept scale eta
        icpt = PHI[:, :, 0] / TAU[:, None] if n_comp else np.zeros(0)
        f = _gauss_logvar_target(
            prior.eta_logvar_mean, prior.eta_logvar_sd, icpt.size, float(np.sum(icpt**2))
        )
        hyper.eta = math.exp(0.5 * self._slice(f, 2.0 * math.log(hyper.eta)))

        # coefficient scale xi per source; entries standardised by ard * nu
        coef = PHI[:, :, 1:] / (hyper.ard[None, None, :] * NU[:, None, None])
        sq_by_cov = (coef**2).sum(axis=(0, 1)) if n_comp else np.zeros(p)
        for s in range(hyper.xi.size):
            cols = hyper.source_of == s
            f = _gauss_logvar_target(
                prior.xi_logvar_mean,
                prior.xi_logvar_sd,
                n_comp * n_branches * int(cols.sum()),
                float(sq_by_cov[cols].sum()),
            )
            hyper.xi[s] = math.exp(0.5 * self._slice(f, 2.0 * math.log(hyper.xi[s])))

        if prior.ard_enabled:
            coef = PHI[:, :, 1:] / (hyper.xi[hyper.source_of][None, None, :] * NU[:, None, None])
            sq_by_cov = (coef**2).sum(axis=(0, 1)) if n_comp else np.zeros(p)
            for l in range(p):
                f = _gauss_logvar_target(
                    prior.ard_logvar_mean,
                    prior.ard_logvar_sd,
                    n_comp * n_branches,
                    float(sq_by_cov[l]),
                )
                hyper.ard[l] = math.exp(0.5 * self._slice(f, 2.0 * math.log(hyper.ard[l])))

    def _update_location_scale(self, values, loc, scale, loc_prior, logvar_prior):
        """Update a normal location ``loc`` and scale ``scale`` shared by the
        columns of ``values`` (one row per component), per covariate or tied."""
        n_comp, p = values.shape
        if self.prior.per_covariate_g0:
            groups = [[l] for l in range(p)]
        else:
            groups = [list(range(p))] if p else []
        for cols in groups:
            v = values[:, cols]
            count = v.size
            s1 = float(v.sum())
            s2 = float((v * v).sum())
            l0 = cols[0]
            f = _gauss_mean_target(loc_prior[0], loc_prior[1], count, s1, s2, scale[l0] ** 2)
            loc[cols] = self._slice(f, loc[l0])
            ss = float(((v - loc[l0]) ** 2).sum())
            f = _gauss_logvar_target(logvar_prior[0], logvar_prior[1], count, ss)
            scale[cols] = math.exp(0.5 * self._slice(f, 2.0 * math.log(scale[l0])))

    def update_concentration(self):
        """Slice update of ``log(gamma)``; the likelihood depends on the number
        of occupied components only."""
        prior = self.prior
        n_comp = self.state.n_components
        n = self.n

        def f(g):
            gamma = math.exp(g)
            d = (g - prior.gamma_log_mean) / prior.gamma_log_sd
            return -0.5 * d * d + n_comp * g + math.lgamma(gamma) - math.lgamma(gamma + n)

        self.hyper.gamma = math.exp(self._slice(f, math.log(self.hyper.gamma)))

    def sweep(self):
        single = self.config.single_component
        if not single:
            self.update_assignments()
        for cid in list(self.state.components):
            self.update_component(cid)
        self.update_hyperparams()
        if not single:
            self.update_concentration()

    # -- output ---------------------------------------------------------------

    def log_likelihood(self) -> float:
        """Joint log likelihood of the data under the current state."""
        st = self.state
        return float(sum(st.loglik[c][st.assign == c].sum() for c in st.counts))

    def snapshot(self, iteration) -> PosteriorSample:
        st = self.state
        state = MixtureState(
            assign=st.assign.copy(),
            components={c: t.copy() for c, t in st.components.items()},
            counts=dict(st.counts),
            next_id=st.next_id,
        )
        return PosteriorSample(
            state=state,
            hyper=self.hyper.copy(),
            iteration=iteration,
            chain=self.chain_id,
            log_lik=self.log_likelihood(),
        )


def run_chain(
    data: Dataset,
    config: ChainConfig,
    prior: PriorSpec,
    chain_id: int = 0,
    hierarchy: ClassHierarchy | None = None,
    on_sample=None,
) -> list:
    """Run one chain and return its retained posterior samples.

    ``on_sample`` is called with each retained sample as it is produced.
    """
    chain = Chain(data, prior, config, chain_id, hierarchy)
    retained = set(config.retained_iterations())
    samples = []
    for t in range(1, config.n_iterations + 1):
        try:
            chain.sweep()
        except (EngineError, ValueError, FloatingPointError) as exc:
            raise EngineError(f"chain {chain_id}, iteration {t}: {exc}") from exc
        if t in retained:
            sample = chain.snapshot(t)
            samples.append(sample)
            if on_sample is not None:
                on_sample(sample)
    if chain.n_hmc:
        logger.debug(
            "chain %d: HMC acceptance %.3f",
            chain_id,
            chain.n_hmc_accepted / chain.n_hmc,
        )
    return samples


def _run_chain_args(args):
    return run_chain(*args)


def run_chains(
    data: Dataset,
    config: ChainConfig,
    prior: PriorSpec,
    hierarchy: ClassHierarchy | None = None,
    n_jobs: int = 1,
) -> list:
    """Run ``config.n_chains`` independent chains (distinct RNG streams).

    Returns one list of samples per chain.  With ``n_jobs > 1`` chains run in
    worker processes; results are identical to a sequential run.
    """
    jobs = [(data, config, prior, c, hierarchy) for c in range(config.n_chains)]
    if n_jobs > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(_run_chain_args, jobs))
    return [_run_chain_args(job) for job in jobs]


def gelman_rubin(traces) -> float:
    """Potential scale reduction factor of a scalar trace across chains.

    ``traces`` has shape (n_chains, n_samples).
    """
    traces = np.asarray(traces, dtype=float)
    n_chains, length = traces.shape
    if n_chains < 2 or length < 2:
        raise ValueError("need at least two chains of length two")
    within = traces.var(axis=1, ddof=1).mean()
    between = length * traces.mean(axis=1).var(ddof=1)
    pooled = (length - 1) / length * within + between / length
    return float(math.sqrt(pooled / within))
