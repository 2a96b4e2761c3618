"""Exact inference for the discretised model, which is linear-Gaussian at every level.

Used as ground truth: Kalman marginal likelihoods for fixed sigma, and
quadrature over a sigma grid for posterior means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import NumericalFailure
from .multi_index import MultiIndex
from .spde_model import GammaPrior, ModelConfig, drift_factor, noise_variance, observation_matrix

DEFAULT_SIGMA_GRID = np.geomspace(1e-3, 3.0, 1024)

# bound on G * K * K doubles held at once
_MAX_BLOCK = 2**24

_LOG_TINY = math.log(np.finfo(float).tiny)


def interval_dynamics(alpha: Sequence[int], config: ModelConfig):
    """Per-mode gain and unit-sigma process variance over one observation interval."""
    K, M, h = config.n_modes(alpha), config.n_steps(alpha), config.step_size(alpha)
    k = np.arange(1, K + 1)
    a = drift_factor(k, config.theta, h)
    gain = a**M
    powers = np.sum((a * a)[None, :] ** np.arange(M)[:, None], axis=0)
    return gain, noise_variance(k, h) * powers


def kalman_filter_loglik(y, gain, proc_var, obs_matrix, m0, tau2: float, return_state: bool = False):
    """Log-likelihood of ``y`` for a diagonal linear-Gaussian model, batched over rows of ``proc_var``.

    ``proc_var`` has shape ``(G, K)`` (one row per parameter value).  The
    Gaussian normalising constant of the observation density is dropped, as
    in :func:`mismc.spde_model.log_g`, so the result is comparable with
    particle-filter estimates built from that unnormalised density.
    With ``return_state`` the final filtering means and covariances are
    returned as well.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    Q = np.atleast_2d(np.asarray(proc_var, dtype=float))
    G, K = Q.shape
    H = np.asarray(obs_matrix, dtype=float)
    d = H.shape[1]
    gain2 = gain[:, None] * gain[None, :]
    diag = np.arange(K)
    R = tau2 * np.eye(d)

    m = np.broadcast_to(np.asarray(m0, dtype=float), (G, K)).copy()
    P = np.zeros((G, K, K))
    ll = np.zeros(G)
    for yp in y:
        m *= gain
        P *= gain2
        P[:, diag, diag] += Q
        PH = P @ H
        S = np.einsum("ki,gkj->gij", H, PH) + R
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("predictive observation covariance is not positive definite") from exc
        e = yp - m @ H
        Sinv = np.linalg.inv(S)
        ll += (
            -0.5 * np.einsum("gi,gij,gj->g", e, Sinv, e)
            - np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
            + 0.5 * d * math.log(tau2)
        )
        Kg = PH @ Sinv
        m += np.einsum("gki,gi->gk", Kg, e)
        # Joseph form, expanded into rank-d corrections
        KPH = Kg @ PH.transpose(0, 2, 1)
        P += Kg @ S @ Kg.transpose(0, 2, 1) - KPH - KPH.transpose(0, 2, 1)
        P = 0.5 * (P + P.transpose(0, 2, 1))
    if not np.all(np.isfinite(ll)):
        raise NumericalFailure("non-finite Kalman log-likelihood")
    return (ll, m, P) if return_state else ll


def kalman_loglik(y, sigma, alpha: Sequence[int], config: ModelConfig):
    """Exact log marginal likelihood of the level-alpha model (scalar or per sigma)."""
    sig = np.atleast_1d(np.asarray(sigma, dtype=float))
    gain, unit_q = interval_dynamics(alpha, config)
    K = gain.shape[0]
    H = observation_matrix(config, K)
    block = max(1, _MAX_BLOCK // (K * K))
    out = np.concatenate(
        [
            kalman_filter_loglik(y, gain, sig[i : i + block, None] ** 2 * unit_q, H, config.u0, config.tau2)
            for i in range(0, sig.size, block)
        ]
    )
    return out.reshape(np.shape(sigma)) if np.ndim(sigma) else float(out[0])


@dataclass
class QuadratureResult:
    mean: float
    nodes: np.ndarray
    weights: np.ndarray  # normalised, aligned with nodes
    log_evidence: float


def trapezoid_coefficients(nodes: np.ndarray) -> np.ndarray:
    gaps = np.diff(nodes)
    c = np.zeros_like(nodes)
    c[:-1] += 0.5 * gaps
    c[1:] += 0.5 * gaps
    return c


def posterior_quadrature(
    y,
    alpha: Sequence[int],
    config: ModelConfig,
    sigma_grid: np.ndarray | None = None,
    prior: GammaPrior | None = None,
    include_origin: bool = True,
) -> QuadratureResult:
    """Posterior mean of sigma by trapezoidal quadrature of prior x Kalman likelihood.

    With ``include_origin`` the segment between 0 and the first grid node is
    added (the likelihood is finite at sigma = 0), so a log-spaced grid does
    not silently drop the prior mass near zero.
    """
    grid = DEFAULT_SIGMA_GRID if sigma_grid is None else np.asarray(sigma_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("sigma grid must be strictly positive and increasing")
    prior = prior or GammaPrior.from_config(config)
    nodes = np.concatenate([[0.0], grid]) if include_origin else grid
    coef = np.ones(1) if nodes.size == 1 else trapezoid_coefficients(nodes)
    with np.errstate(divide="ignore"):
        log_prior_mass = prior.logpdf(nodes) + np.log(coef)
    # the unnormalised likelihood is at most 1, so prior mass bounds every weight
    if not np.any(log_prior_mass > _LOG_TINY):
        raise NumericalFailure("grid does not cover posterior mass")
    log_w = log_prior_mass + kalman_loglik(y, nodes, alpha, config)
    finite = np.isfinite(log_w)
    if not finite.any():
        raise NumericalFailure("grid does not cover posterior mass")
    log_norm = logsumexp(log_w[finite])
    weights = np.where(finite, np.exp(log_w - log_norm), 0.0)
    return QuadratureResult(
        mean=float(np.sum(weights * nodes)),
        nodes=nodes,
        weights=weights,
        log_evidence=float(log_norm),
    )


def truth_table(
    y,
    index_set: Iterable[MultiIndex],
    config: ModelConfig,
    sigma_grid: np.ndarray | None = None,
    prior: GammaPrior | None = None,
) -> dict[MultiIndex, float]:
    return {
        tuple(alpha): posterior_quadrature(y, alpha, config, sigma_grid, prior).mean
        for alpha in index_set
    }


def write_truth_table(table: dict[MultiIndex, float], path: str | Path) -> None:
    rows = ["alpha_x,alpha_t,posterior_mean"]
    rows += [f"{a[0]},{a[1]},{v!r}" for a, v in sorted(table.items())]
    Path(path).write_text("\n".join(rows) + "\n")


def read_truth_table(path: str | Path) -> dict[MultiIndex, float]:
    lines = Path(path).read_text().splitlines()[1:]
    out = {}
    for ln in lines:
        if ln.strip():
            ax, at, v = ln.split(",")
            out[(int(ax), int(at))] = float(v)
    return out
