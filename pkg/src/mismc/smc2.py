"""SMC^2 over (sigma, inner particle filter) pairs for one coupled index.

Each outer particle is a row of a batched :class:`InnerParticleSystem`.  One
assimilation step is: resample outer particles by their incremental weights,
rejuvenate each with one PMMH move targeting the data seen so far, extend
every inner filter by one observation, and set the new incremental weight to
the inner filter's mean g_check.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .errors import NumericalFailure
from .multi_index import DodExpansion
from .particle_filter import InnerParticleSystem, multinomial_resample, pf_init, pf_step, sample_trajectory
from .pmcmc import LogRandomWalk, PmmhChain, particle_estimator, pmmh_step, ratio_estimate
from .spde_model import CoupledKernel, GammaPrior


@dataclass
class OuterSystem:
    inner: InnerParticleSystem  # batch axis = outer particles
    log_G: np.ndarray  # (N_alpha,) log incremental weights, zero after resampling
    prior: GammaPrior
    n_inner: int
    time: int = 0
    cost: float = 0.0
    selected_log_H: np.ndarray | None = None  # (N_alpha, k), set by select_trajectories
    last_acceptance: float = float("nan")
    log_evidence: float = 0.0  # running log of the product of mean outer weights
    diagnostics: list[tuple[int, float, float, float]] = field(default_factory=list)

    @property
    def expansion(self) -> DodExpansion:
        return self.inner.kernel.expansion

    @property
    def sigma(self) -> np.ndarray:
        return self.inner.sigma

    @property
    def n_outer(self) -> int:
        return self.inner.sigma.shape[0]

    def outer_log_weights(self) -> np.ndarray:
        return self.log_G - logsumexp(self.log_G)

    def outer_ess(self) -> float:
        return float(1.0 / np.sum(np.exp(2.0 * self.outer_log_weights())))

    def write_diagnostics(self, path: str | Path) -> None:
        lines = ["p,outer_ess,mean_acceptance,logG_mean"]
        lines += [f"{p},{e!r},{a!r},{g!r}" for p, e, a, g in self.diagnostics]
        Path(path).write_text("\n".join(lines) + "\n")


def smc2_init(
    kernel: CoupledKernel,
    n_inner: int,
    n_outer: int,
    rng: np.random.Generator,
    prior: GammaPrior,
    y0=None,
) -> OuterSystem:
    """Draw sigma from the prior and start one inner filter per outer particle."""
    if n_inner < 1 or n_outer < 1:
        raise ValueError("particle counts must be >= 1")
    sigma = prior.sample(rng, n_outer)
    inner = pf_init(sigma, kernel, n_inner, rng, y0=y0)
    log_G = inner.log_Z.copy()
    return OuterSystem(
        inner=inner, log_G=log_G, prior=prior, n_inner=n_inner,
        log_evidence=float(logsumexp(log_G) - np.log(n_outer)),
    )


def smc2_rejuvenate(
    system: OuterSystem,
    y,
    proposal_scale: float,
    rng: np.random.Generator,
    n_moves: int = 1,
) -> OuterSystem:
    """Resample outer particles by their weights, then apply PMMH moves on y[:time]."""
    anc = multinomial_resample(system.outer_log_weights()[None, :], rng)[0]
    inner = system.inner.take(anc)
    chain = PmmhChain(sigma=inner.sigma, log_Z=inner.log_Z, inner=inner, n_accepted=np.zeros(system.n_outer, dtype=int))
    estimator = particle_estimator(np.asarray(y)[: system.time], inner.kernel, system.n_inner)
    for _ in range(n_moves):
        chain = pmmh_step(chain, estimator, system.prior, LogRandomWalk(proposal_scale), rng)
    inner = replace(chain.inner, sigma=chain.sigma, log_Z=chain.log_Z, cost=0.0)
    return replace(
        system,
        inner=inner,
        log_G=np.zeros(system.n_outer),
        cost=system.cost + chain.cost,
        selected_log_H=None,
        last_acceptance=float(np.mean(chain.acceptance_rate)),
    )


def smc2_extend(system: OuterSystem, y, rng: np.random.Generator) -> OuterSystem:
    """Advance every inner filter by observation y[time]; new weights are the mean g_check."""
    before = system.inner.log_Z
    inner = pf_step(replace(system.inner, cost=0.0), np.asarray(y)[system.time], rng)
    log_G = inner.log_Z - before
    if not np.all(np.isfinite(log_G)):
        raise NumericalFailure("non-finite outer weight")
    increment = float(logsumexp(system.outer_log_weights() + log_G))
    return replace(
        system,
        inner=inner,
        log_G=system.log_G + log_G,
        log_evidence=system.log_evidence + increment,
        time=system.time + 1,
        cost=system.cost + inner.cost,
        selected_log_H=None,
    )


def smc2_advance(system: OuterSystem, y, proposal_scale: float, rng: np.random.Generator, n_moves: int = 1) -> OuterSystem:
    """Select, mutate, extend and reweight: one assimilation step."""
    moved = smc2_rejuvenate(system, y, proposal_scale, rng, n_moves)
    out = smc2_extend(moved, y, rng)
    out.diagnostics = system.diagnostics + [
        (out.time, out.outer_ess(), moved.last_acceptance, float(np.mean(out.log_G)))
    ]
    return out


def select_trajectories(system: OuterSystem, rng: np.random.Generator) -> OuterSystem:
    """Draw one inner particle per outer particle with probability equal to its inner weight."""
    sel = sample_trajectory(system.inner, rng)
    return replace(system, selected_log_H=sel.log_H)


def _phi_values(system: OuterSystem, phi, component: int) -> np.ndarray:
    if callable(phi):
        try:
            return np.broadcast_to(np.asarray(phi(system.sigma, component), dtype=float), system.sigma.shape)
        except TypeError:
            return np.broadcast_to(np.asarray(phi(system.sigma), dtype=float), system.sigma.shape)
    return np.broadcast_to(np.asarray(phi, dtype=float), system.sigma.shape)


def eta_estimate(system: OuterSystem, phi, component: int) -> float:
    """H-weighted ratio estimate of phi at one component of the expansion.

    ``phi`` is a callable of sigma (optionally also of the component) or a
    per-particle array.  Outer weights that have not yet been resampled away
    enter as importance weights.
    """
    if system.selected_log_H is None:
        raise ValueError("call select_trajectories first")
    log_w = system.outer_log_weights()
    try:
        return ratio_estimate(_phi_values(system, phi, component), system.selected_log_H[:, component], log_w)
    except NumericalFailure as exc:
        raise NumericalFailure(f"H-weight collapse at component {component}") from exc


def dod_estimate(system: OuterSystem, phi) -> float:
    """Signed sum of paired eta estimates; the plain estimate when k_alpha = 1."""
    expansion = system.expansion
    if expansion.k == 1:
        return eta_estimate(system, phi, 0)
    total = 0.0
    for sign, hi, lo in expansion.pairs:
        total += sign * (eta_estimate(system, phi, hi) - eta_estimate(system, phi, lo))
    return total


@dataclass
class Smc2Result:
    estimates: dict[int, float]  # time index n -> DOD estimate
    cost: float  # cumulative work units up to each report are in cost_at
    cost_at: dict[int, float]
    system: OuterSystem


def run_smc2(
    y,
    kernel: CoupledKernel,
    n_inner: int,
    n_outer: int,
    rng: np.random.Generator,
    prior: GammaPrior,
    report_times=None,
    phi: Callable = lambda s: s,
    proposal_scale: float = 1.0,
    n_moves: int = 1,
) -> Smc2Result:
    """Run through ``y`` and report DOD estimates after observations ``report_times``.

    The estimate at time n is taken from the rejuvenated (equally weighted)
    outer particles targeting y_1..y_n, i.e. after the select and mutate
    half of the following step.
    """
    y = np.asarray(y, dtype=float)
    n_total = len(y)
    reports = sorted(set(report_times or [n_total]))
    if reports and (reports[0] < 0 or reports[-1] > n_total):
        raise ValueError("report times must lie in 0..n_obs")
    system = smc2_init(kernel, n_inner, n_outer, rng, prior)
    estimates, cost_at = {}, {}
    while True:
        if system.time in reports:
            moved = smc2_rejuvenate(system, y, proposal_scale, rng, n_moves)
            chosen = select_trajectories(moved, rng)
            estimates[system.time] = dod_estimate(chosen, phi)
            cost_at[system.time] = moved.cost
            if system.time == n_total:
                system = moved
                break
            nxt = smc2_extend(moved, y, rng)
            nxt.diagnostics = system.diagnostics + [
                (nxt.time, nxt.outer_ess(), moved.last_acceptance, float(np.mean(nxt.log_G)))
            ]
            system = nxt
        elif system.time == n_total:
            break
        else:
            system = smc2_advance(system, y, proposal_scale, rng, n_moves)
    return Smc2Result(estimates, system.cost, cost_at, system)
