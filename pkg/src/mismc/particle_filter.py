"""Coupled bootstrap particle filter for a fixed parameter.

All arrays carry a leading batch axis ``B`` (one independent filter per
row, each with its own sigma) followed by the particle axis ``N``.  A single
filter is the case ``B = 1``.  Path functionals are carried along the
ancestry instead of storing trajectories: ``log_H[b, j, i]`` is the running
sum of ``log g_i - log g_check`` along particle ``j``'s lineage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import NumericalFailure
from .spde_model import CoupledKernel


@dataclass
class InnerParticleSystem:
    kernel: CoupledKernel
    sigma: np.ndarray  # (B,)
    states: list[np.ndarray]  # per component, (B, N, K_c)
    log_weights: np.ndarray  # (B, N), normalised
    log_H: np.ndarray  # (B, N, k)
    log_Z: np.ndarray  # (B,)
    time: int = 0
    cost: float = 0.0
    ancestry: list[np.ndarray] | None = None
    history: list[tuple[int, np.ndarray, np.ndarray]] | None = None

    @property
    def n_particles(self) -> int:
        return self.log_weights.shape[1]

    @property
    def batch(self) -> int:
        return self.log_weights.shape[0]

    def ess(self) -> np.ndarray:
        return 1.0 / np.sum(np.exp(2.0 * self.log_weights), axis=1)

    def take(self, rows: np.ndarray) -> "InnerParticleSystem":
        """Sub-batch (with repetition) along the batch axis."""
        return replace(
            self,
            sigma=self.sigma[rows],
            states=[u[rows] for u in self.states],
            log_weights=self.log_weights[rows],
            log_H=self.log_H[rows],
            log_Z=self.log_Z[rows],
            ancestry=None if self.ancestry is None else [a[rows] for a in self.ancestry],
            history=None,
        )


def merge(mask: np.ndarray, new: InnerParticleSystem, old: InnerParticleSystem) -> InnerParticleSystem:
    """Row-wise choice: rows where ``mask`` is true come from ``new``."""
    m1 = mask[:, None]
    m2 = mask[:, None, None]
    if new.time != old.time:
        raise ValueError("cannot merge systems at different times")
    return replace(
        old,
        sigma=np.where(mask, new.sigma, old.sigma),
        states=[np.where(m2, a, b) for a, b in zip(new.states, old.states)],
        log_weights=np.where(m1, new.log_weights, old.log_weights),
        log_H=np.where(m2, new.log_H, old.log_H),
        log_Z=np.where(mask, new.log_Z, old.log_Z),
        ancestry=None,
        history=None,
        cost=old.cost + new.cost,
    )


def _normalise(log_w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalised log-weights and log of the mean unnormalised weight, per row."""
    lse = logsumexp(log_w, axis=1)
    if not np.all(np.isfinite(lse)):
        raise NumericalFailure("all particle weights are zero")
    return log_w - lse[:, None], lse - math.log(log_w.shape[1])


def multinomial_resample(log_weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent categorical draws per row, shape (B, N)."""
    B, N = log_weights.shape
    cw = np.cumsum(np.exp(log_weights), axis=1)
    cw /= cw[:, -1:]
    offset = np.arange(B)[:, None]
    u = rng.random((B, N))
    idx = np.searchsorted((cw + offset).ravel(), (u + offset).ravel(), side="right")
    return np.minimum(idx.reshape(B, N) - offset * N, N - 1)


def systematic_resample(log_weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    B, N = log_weights.shape
    cw = np.cumsum(np.exp(log_weights), axis=1)
    cw /= cw[:, -1:]
    offset = np.arange(B)[:, None]
    u = (rng.random((B, 1)) + np.arange(N)[None, :]) / N
    idx = np.searchsorted((cw + offset).ravel(), (u + offset).ravel(), side="right")
    return np.minimum(idx.reshape(B, N) - offset * N, N - 1)


RESAMPLERS = {"multinomial": multinomial_resample, "systematic": systematic_resample}


def pf_init(
    sigma,
    kernel: CoupledKernel,
    n_particles: int,
    rng: np.random.Generator,
    y0=None,
    keep_ancestry: bool = False,
    record: bool = False,
) -> InnerParticleSystem:
    """Initial particles from the coupled initial law.

    Without an initial observation ``y0`` the weights are uniform and
    ``log_Z`` starts at 0.
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    B, N, k = sigma.shape[0], n_particles, kernel.expansion.k
    states = kernel.initial((B, N))
    system = InnerParticleSystem(
        kernel=kernel,
        sigma=sigma,
        states=states,
        log_weights=np.full((B, N), -math.log(N)),
        log_H=np.zeros((B, N, k)),
        log_Z=np.zeros(B),
        ancestry=[] if keep_ancestry else None,
        history=[] if record else None,
    )
    if y0 is not None:
        _weight(system, y0)
    return system


def _weight(system: InnerParticleSystem, y) -> None:
    lg = system.kernel.log_g_components(system.states, y)
    lgc = lg.max(axis=-1)
    system.log_H = system.log_H + (lg - lgc[..., None])
    system.log_weights, inc = _normalise(lgc)
    system.log_Z = system.log_Z + inc
    if system.history is not None:
        system.history.append((system.time, system.ess(), inc))


def pf_step(system: InnerParticleSystem, y, rng: np.random.Generator, resampling: str = "multinomial") -> InnerParticleSystem:
    """Resample, propagate one interval through the coupled kernel, reweight by g_check."""
    kernel = system.kernel
    B, N = system.log_weights.shape
    anc = RESAMPLERS[resampling](system.log_weights, rng)
    rows = np.arange(B)[:, None]
    states = [u[rows, anc] for u in system.states]
    out = replace(
        system,
        states=kernel.propagate(states, system.sigma[:, None], rng),
        log_H=system.log_H[rows, anc],
        time=system.time + 1,
        cost=system.cost + B * N * kernel.cost_per_particle,
        ancestry=None if system.ancestry is None else system.ancestry + [anc],
    )
    _weight(out, y)
    return out


def run_particle_filter(
    sigma,
    y,
    kernel: CoupledKernel,
    n_particles: int,
    rng: np.random.Generator,
    **kwargs,
) -> InnerParticleSystem:
    """Filter through every row of ``y`` (observations 1..n)."""
    resampling = kwargs.pop("resampling", "multinomial")
    system = pf_init(sigma, kernel, n_particles, rng, **kwargs)
    for yp in np.asarray(y, dtype=float):
        system = pf_step(system, yp, rng, resampling)
    return system


def nc_estimate(system: InnerParticleSystem) -> np.ndarray:
    """log Z^N: sum over processed observations of the log mean g_check weight."""
    return system.log_Z


@dataclass
class Selection:
    index: np.ndarray  # (B,)
    log_H: np.ndarray  # (B, k)
    states: list[np.ndarray] = field(default_factory=list)  # per component, (B, K_c)


def sample_trajectory(system: InnerParticleSystem, rng: np.random.Generator) -> Selection:
    """Draw one particle per row with probability equal to its current weight."""
    B, N = system.log_weights.shape
    u = rng.random(B)
    cw = np.cumsum(np.exp(system.log_weights), axis=1)
    cw /= cw[:, -1:]
    s = np.minimum((cw < u[:, None]).sum(axis=1), N - 1)
    rows = np.arange(B)
    return Selection(
        index=s,
        log_H=system.log_H[rows, s],
        states=[x[rows, s] for x in system.states],
    )


def lineage(ancestry: list[np.ndarray], final_index: np.ndarray) -> np.ndarray:
    """Ancestor indices b_0..b_n of the given final particles, shape (B, n + 1)."""
    b = [np.asarray(final_index)]
    rows = np.arange(b[0].shape[0])
    for anc in reversed(ancestry):
        b.append(anc[rows, b[-1]])
    return np.stack(b[::-1], axis=1)


def write_diagnostics(system: InnerParticleSystem, path: str | Path, row: int = 0) -> None:
    if system.history is None:
        raise ValueError("filter was run without record=True")
    lines = ["p,ess,log_z_increment"]
    lines += [f"{p},{ess[row]!r},{inc[row]!r}" for p, ess, inc in system.history]
    Path(path).write_text("\n".join(lines) + "\n")
