"""Particle marginal Metropolis-Hastings over sigma, batched over independent chains.

The same step serves as a standalone sampler (MI-PMCMC) and as the mutation
kernel inside SMC^2, where each outer particle is one chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import NumericalFailure
from .mi_estimator import EstimateRecord
from .multi_index import as_index, dod_expand
from .particle_filter import InnerParticleSystem, Selection, merge, run_particle_filter, sample_trajectory
from .seeding import seed_stream
from .spde_model import CoupledKernel, GammaPrior


@dataclass(frozen=True)
class LogRandomWalk:
    """Gaussian random walk on log sigma.

    ``log_correction`` is log r(new, old) - log r(old, new) = log new - log old.
    """

    scale: float

    def propose(self, sigma: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        new = sigma * np.exp(self.scale * rng.standard_normal(sigma.shape))
        return new, np.log(new) - np.log(sigma)


@dataclass
class PmmhChain:
    sigma: np.ndarray  # (B,)
    log_Z: np.ndarray  # (B,)
    inner: InnerParticleSystem | None = None
    selection: Selection | None = None
    n_accepted: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    n_proposed: int = 0
    cost: float = 0.0

    @property
    def acceptance_rate(self) -> np.ndarray:
        return self.n_accepted / max(self.n_proposed, 1)


# estimator(sigma, rng) -> (log_Z, inner system or None)
Estimator = Callable[[np.ndarray, np.random.Generator], tuple[np.ndarray, InnerParticleSystem | None]]


def particle_estimator(y, kernel: CoupledKernel, n_particles: int, resampling: str = "multinomial") -> Estimator:
    def estimate(sigma, rng):
        system = run_particle_filter(sigma, y, kernel, n_particles, rng, resampling=resampling)
        return system.log_Z, system

    return estimate


def log_acceptance_ratio(log_Z_new, log_Z_old, sigma_new, sigma_old, prior: GammaPrior, log_correction):
    with np.errstate(invalid="ignore"):
        out = (
            np.asarray(log_Z_new) - np.asarray(log_Z_old)
            + prior.logpdf(sigma_new) - prior.logpdf(sigma_old)
            + np.asarray(log_correction)
        )
    return np.where(np.asarray(sigma_new) > 0, np.nan_to_num(out, nan=-np.inf), -np.inf)


def pmmh_init(
    estimator: Estimator,
    prior: GammaPrior,
    n_chains: int,
    rng: np.random.Generator,
    select: bool = False,
    sigma: np.ndarray | None = None,
    max_tries: int = 10,
) -> PmmhChain:
    """Start chains from prior draws (or from ``sigma``) with a fresh likelihood estimate."""
    sig = prior.sample(rng, n_chains) if sigma is None else np.asarray(sigma, dtype=float).copy()
    for _ in range(max_tries):
        log_Z, inner = estimator(sig, rng)
        if np.all(np.isfinite(log_Z)):
            break
        bad = ~np.isfinite(log_Z)
        sig = np.where(bad, prior.sample(rng, n_chains), sig)
    else:
        raise NumericalFailure("likelihood estimate underflowed at initialisation")
    cost = 0.0 if inner is None else inner.cost
    selection = sample_trajectory(inner, rng) if (select and inner is not None) else None
    return PmmhChain(sig, np.asarray(log_Z, dtype=float), inner, selection, np.zeros(n_chains, dtype=int), 0, cost)


def pmmh_step(
    chain: PmmhChain,
    estimator: Estimator,
    prior: GammaPrior,
    proposal: LogRandomWalk | float,
    rng: np.random.Generator,
    select: bool = False,
) -> PmmhChain:
    """One PMMH iteration per chain; with ``select`` a trajectory is drawn from each fresh filter.

    ``proposal`` is a random-walk scale or any object with a
    ``propose(sigma, rng) -> (new, log_correction)`` method.
    """
    if isinstance(proposal, (int, float)):
        proposal = LogRandomWalk(float(proposal))
    sig_new, log_corr = proposal.propose(chain.sigma, rng)
    log_Z_new, inner_new = estimator(sig_new, rng)
    log_r = log_acceptance_ratio(log_Z_new, chain.log_Z, sig_new, chain.sigma, prior, log_corr)
    accept = np.log(rng.random(chain.sigma.shape)) < log_r

    inner = chain.inner
    if inner is not None and inner_new is not None:
        inner = merge(accept, inner_new, inner)
    selection = chain.selection
    if select and inner_new is not None:
        fresh = sample_trajectory(inner_new, rng)
        if selection is None:
            selection = fresh
        else:
            selection = Selection(
                index=np.where(accept, fresh.index, selection.index),
                log_H=np.where(accept[:, None], fresh.log_H, selection.log_H),
                states=[np.where(accept[:, None], a, b) for a, b in zip(fresh.states, selection.states)],
            )
    return replace(
        chain,
        sigma=np.where(accept, sig_new, chain.sigma),
        log_Z=np.where(accept, log_Z_new, chain.log_Z),
        inner=inner,
        selection=selection,
        n_accepted=chain.n_accepted + accept,
        n_proposed=chain.n_proposed + 1,
        cost=chain.cost + (0.0 if inner_new is None else inner_new.cost),
    )


@dataclass
class PmmhTrace:
    sigma: np.ndarray  # (T,)
    log_Z: np.ndarray  # (T,)
    accepted: np.ndarray  # (T,) bool
    log_H: np.ndarray  # (T, k)
    cost: float

    def write_csv(self, path: str | Path) -> None:
        lines = ["iter,theta,log_z,accepted"]
        lines += [
            f"{i},{s!r},{z!r},{int(a)}"
            for i, (s, z, a) in enumerate(zip(self.sigma, self.log_Z, self.accepted))
        ]
        Path(path).write_text("\n".join(lines) + "\n")


def run_pmmh(
    y,
    kernel: CoupledKernel,
    n_particles: int,
    n_iter: int,
    rng: np.random.Generator,
    prior: GammaPrior,
    proposal: LogRandomWalk | float,
    estimator: Estimator | None = None,
) -> PmmhTrace:
    """A single PMMH chain with trajectory selection; iterate 0 is the initial state."""
    estimator = estimator or particle_estimator(y, kernel, n_particles)
    chain = pmmh_init(estimator, prior, 1, rng, select=True)
    k = kernel.expansion.k
    sig, logz, acc, log_H = np.empty(n_iter + 1), np.empty(n_iter + 1), np.zeros(n_iter + 1, bool), np.zeros((n_iter + 1, k))

    def record(i, accepted):
        sig[i], logz[i], acc[i] = chain.sigma[0], chain.log_Z[0], accepted
        if chain.selection is not None:
            log_H[i] = chain.selection.log_H[0]

    record(0, True)
    for i in range(1, n_iter + 1):
        before = chain.n_accepted[0]
        chain = pmmh_step(chain, estimator, prior, proposal, rng, select=True)
        record(i, chain.n_accepted[0] > before)
    return PmmhTrace(sig, logz, acc, log_H, chain.cost)


def tune_proposal_scale(
    estimator: Estimator,
    prior: GammaPrior,
    rng: np.random.Generator,
    scale: float = 1.0,
    target: tuple[float, float] = (0.15, 0.30),
    n_chains: int = 8,
    n_iter: int = 30,
    rounds: int = 6,
) -> float:
    """Adjust the random-walk scale by short pre-runs until acceptance lands in ``target``."""
    chain = pmmh_init(estimator, prior, n_chains, rng)
    for _ in range(rounds):
        chain = replace(chain, n_accepted=np.zeros(n_chains, dtype=int), n_proposed=0)
        for _ in range(n_iter):
            chain = pmmh_step(chain, estimator, prior, scale, rng)
        rate = float(np.mean(chain.acceptance_rate))
        if target[0] <= rate <= target[1]:
            break
        scale = scale * 1.5 if rate > target[1] else scale / 1.5
    return scale


def ratio_estimate(phi: np.ndarray, log_H: np.ndarray, log_w: np.ndarray | None = None) -> float:
    """sum_l w_l phi_l H_l / sum_l w_l H_l for one component, in log space."""
    log_H = np.asarray(log_H, dtype=float)
    if log_w is not None:
        log_H = log_H + log_w
    if not np.any(np.isfinite(log_H)):
        raise NumericalFailure("H-weight collapse")
    w = np.exp(log_H - logsumexp(log_H))
    return float(np.sum(w * np.asarray(phi, dtype=float)))


def signed_dod(expansion, phi: np.ndarray | Sequence[np.ndarray], log_H: np.ndarray, log_w: np.ndarray | None = None) -> float:
    """Signed sum of paired H-weighted ratio estimates over one sample set.

    ``phi`` is one array shared by every component or a list with one array
    per component; ``log_H`` has shape (samples, k).
    """
    if not isinstance(phi, (list, tuple)):
        phi = [np.asarray(phi)] * expansion.k
    if expansion.k == 1:
        return ratio_estimate(phi[0], log_H[:, 0], log_w)
    total = 0.0
    for sign, hi, lo in expansion.pairs:
        total += sign * (
            ratio_estimate(phi[hi], log_H[:, hi], log_w) - ratio_estimate(phi[lo], log_H[:, lo], log_w)
        )
    return total


def mi_pmcmc_estimate(trace: PmmhTrace, expansion, phi: Callable = lambda s: s, burn_in: float = 0.1) -> float:
    """Ergodic-average DOD estimate at one index from a PMMH trace."""
    start = int(math.ceil(burn_in * len(trace.sigma)))
    return signed_dod(expansion, phi(trace.sigma[start:]), trace.log_H[start:])


def run_mi_pmcmc(
    y,
    index_set,
    iterations: dict,
    config,
    n_particles: int,
    seed: int,
    proposal_scale: float = 1.0,
    phi: Callable = lambda s: s,
    replicate: int = 0,
    burn_in: float = 0.1,
) -> list:
    """One independent PMMH chain per index; returns an EstimateRecord per index.

    Each chain draws from its own stream keyed by (alpha, replicate), so the
    result for one index does not depend on which others are run.
    """
    prior = GammaPrior.from_config(config)
    records = []
    for alpha in index_set:
        alpha = as_index(alpha)
        expansion = dod_expand(alpha)
        kernel = CoupledKernel(expansion, config)
        rng = seed_stream(seed, (*alpha, replicate))
        trace = run_pmmh(y, kernel, n_particles, iterations[alpha], rng, prior, proposal_scale)
        value = mi_pmcmc_estimate(trace, expansion, phi, burn_in)
        records.append(EstimateRecord(alpha, value, iterations[alpha], trace.cost, seed, replicate, len(y)))
    return records
