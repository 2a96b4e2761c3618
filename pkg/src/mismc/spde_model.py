"""Spectral exponential-Euler discretisation of the stochastic heat equation.

The hidden state at level ``alpha = (alpha_x, alpha_t)`` is the vector of the
first ``K = K0 * 2**alpha_x`` sine-mode coefficients, advanced over each
observation interval ``delta`` with ``M = M0 * 2**alpha_t`` exponential-Euler
steps.  Modes are decoupled, so every array operation here acts on the last
axis and broadcasts over any leading batch axes (outer particle, inner
particle).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .multi_index import DodExpansion, MultiIndex, as_index
from .seeding import seed_stream


@dataclass
class ModelConfig:
    theta: float = 0.5
    sigma2: float = 0.1
    tau2: float = 1.0
    delta: float = 0.001
    n_obs: int = 100
    K0: int = 4
    M0: int = 2
    obs_locations: tuple[float, ...] = (1.0 / 3.0, 2.0 / 3.0)
    u0: float = 1.0
    seed: int = 0
    # not part of the model proper, but carried in the same file
    prior_shape: float = 1.0
    prior_scale: float = math.sqrt(0.1)
    n_inner: int = 500
    data_level: tuple[int, int] = (6, 3)

    def __post_init__(self):
        self.obs_locations = tuple(float(x) for x in self.obs_locations)
        self.data_level = tuple(int(a) for a in self.data_level)
        if self.sigma2 <= 0:
            raise ConfigError("sigma2 must be positive")
        if self.tau2 <= 0:
            raise ConfigError("tau2 must be positive")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        if self.K0 < 1 or self.M0 < 1:
            raise ConfigError("K0 and M0 must be >= 1")
        if self.n_obs < 0 or self.n_inner < 1:
            raise ConfigError("n_obs must be >= 0 and n_inner >= 1")
        if not self.obs_locations or not all(0 < x < 1 for x in self.obs_locations):
            raise ConfigError("observation locations must lie strictly inside (0, 1)")
        if self.prior_shape <= 0 or self.prior_scale <= 0:
            raise ConfigError("prior shape and scale must be positive")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def n_modes(self, alpha: Sequence[int]) -> int:
        return self.K0 * 2 ** int(alpha[0])

    def n_steps(self, alpha: Sequence[int]) -> int:
        return self.M0 * 2 ** int(alpha[1])

    def step_size(self, alpha: Sequence[int]) -> float:
        return self.delta / self.n_steps(alpha)

    def replace(self, **changes) -> "ModelConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ModelConfig(**values)


_INT_KEYS = {"n_obs", "K0", "M0", "seed", "n_inner"}


def load_config(path: str | Path) -> ModelConfig:
    """Read a flat ``key=value`` file.  Unknown keys are a ConfigError."""
    return config_from_mapping(read_key_values(path))


def read_key_values(path: str | Path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def config_from_mapping(values: dict[str, str]) -> ModelConfig:
    kwargs: dict = {}
    x = {}
    data = {}
    try:
        for key, value in values.items():
            if key in ("x1", "x2", "x3", "x4"):
                x[int(key[1:])] = float(value)
            elif key in ("data_ax", "data_at"):
                data[key] = int(value)
            elif key in _INT_KEYS:
                kwargs[key] = int(value)
            elif key in {f.name for f in fields(ModelConfig)} - {"obs_locations", "data_level"}:
                kwargs[key] = float(value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if x:
        kwargs["obs_locations"] = tuple(x[i] for i in sorted(x))
    if data:
        base = ModelConfig().data_level
        kwargs["data_level"] = (data.get("data_ax", base[0]), data.get("data_at", base[1]))
    return ModelConfig(**kwargs)


def dump_config(config: ModelConfig) -> str:
    lines = [
        f"theta={config.theta!r}",
        f"sigma2={config.sigma2!r}",
        f"tau2={config.tau2!r}",
        f"delta={config.delta!r}",
        f"n_obs={config.n_obs}",
        f"K0={config.K0}",
        f"M0={config.M0}",
    ]
    lines += [f"x{i + 1}={x!r}" for i, x in enumerate(config.obs_locations)]
    lines += [
        f"u0={config.u0!r}",
        f"seed={config.seed}",
        f"prior_shape={config.prior_shape!r}",
        f"prior_scale={config.prior_scale!r}",
        f"n_inner={config.n_inner}",
        f"data_ax={config.data_level[0]}",
        f"data_at={config.data_level[1]}",
    ]
    return "\n".join(lines) + "\n"


def eigenvalue(k):
    """lambda_k = k^2 pi^2."""
    k = np.asarray(k, dtype=float)
    return k * k * np.pi**2


def eigenfunction(k, x):
    """e_k(x) = sqrt(2) sin(k pi x)."""
    return np.sqrt(2.0) * np.sin(np.pi * np.asarray(k, dtype=float) * np.asarray(x, dtype=float))


def noise_variance(k, h: float, sigma: float = 1.0):
    """Variance of one exponential-Euler increment for mode k over a step h."""
    lam = eigenvalue(k)
    return sigma**2 * -np.expm1(-2.0 * lam * h) / (2.0 * lam)


def drift_factor(k, theta: float, h: float):
    """Deterministic one-step multiplier e^{-lam h} + (1 - e^{-lam h}) theta / lam."""
    lam = eigenvalue(k)
    return np.exp(-lam * h) - np.expm1(-lam * h) * theta / lam


def euler_step(coeffs, theta: float, h: float, noise):
    """One exponential-Euler step on the trailing mode axis.

    ``noise`` holds the already-scaled Gaussian increments, one per mode.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    coeffs = np.asarray(coeffs, dtype=float)
    k = np.arange(1, coeffs.shape[-1] + 1)
    return drift_factor(k, theta, h) * coeffs + noise


def aggregate_noise(r, decay):
    """Coarse-step increments e^{-lam h} r_{2i} + r_{2i+1} from fine ones (steps on axis -2)."""
    r = np.asarray(r, dtype=float)
    return decay * r[..., 0::2, :] + r[..., 1::2, :]


def observation_matrix(config: ModelConfig, n_modes: int) -> np.ndarray:
    """E[k, i] = e_{k+1}(x_i); ``coeffs @ E`` evaluates the field at the locations."""
    k = np.arange(1, n_modes + 1)[:, None]
    return eigenfunction(k, np.asarray(config.obs_locations)[None, :])


def observe_solution(coeffs, x) -> np.ndarray:
    """u(x) = sum_k u_k e_k(x) over the modes held in ``coeffs``."""
    coeffs = np.asarray(coeffs, dtype=float)
    x = np.asarray(x, dtype=float)
    k = np.arange(1, coeffs.shape[-1] + 1).reshape((-1,) + (1,) * x.ndim)
    return np.tensordot(coeffs, eigenfunction(k, x), axes=([-1], [0]))


def log_g(coeffs, y, config: ModelConfig, obs_matrix: np.ndarray | None = None):
    """Unnormalised Gaussian log-likelihood -sum_i (y_i - u(x_i))^2 / (2 tau^2)."""
    coeffs = np.asarray(coeffs, dtype=float)
    if obs_matrix is None:
        obs_matrix = observation_matrix(config, coeffs.shape[-1])
    resid = np.asarray(y, dtype=float) - coeffs @ obs_matrix
    return -0.5 * np.sum(resid * resid, axis=-1) / config.tau2


@dataclass
class CoupledKernel:
    """Coupled initial law and one-interval transition for the levels of an expansion.

    Components that are coarse in time use the aggregated fine noise
    ``e^{-lam h} r_{2i} + r_{2i+1}``; components that are coarse in space keep
    only their leading modes.  Each component is marginally the exact
    single-level exponential-Euler chain.
    """

    expansion: DodExpansion
    config: ModelConfig
    n_modes: list[int] = field(init=False)
    n_steps: list[int] = field(init=False)
    time_coarse: list[bool] = field(init=False)

    def __post_init__(self):
        exp, cfg = self.expansion, self.config
        if len(exp.alpha) != 2:
            raise ValueError("the heat-equation model has exactly two level axes")
        self.n_modes = [cfg.n_modes(t) for t in exp.terms]
        self.n_steps = [cfg.n_steps(t) for t in exp.terms]
        self.time_coarse = [bool(exp.decrements(i)[1]) for i in range(exp.k)]
        self.K = cfg.n_modes(exp.alpha)
        self.M = cfg.n_steps(exp.alpha)
        self.h = cfg.step_size(exp.alpha)
        k = np.arange(1, self.K + 1)
        self.decay = np.exp(-eigenvalue(k) * self.h)
        self.unit_sd = np.sqrt(noise_variance(k, self.h))
        self.obs_matrix = observation_matrix(cfg, self.K)
        self.cost_per_particle = sum(K * M for K, M in zip(self.n_modes, self.n_steps))
        self._build_interval_law()

    def _build_interval_law(self):
        """Joint law over one interval of the fine-time and coarse-time aggregated noise."""
        cfg, K, M = self.config, self.K, self.M
        k = np.arange(1, K + 1)
        levels = [False] + ([True] if any(self.time_coarse) else [])
        weights, gains = [], []
        for coarse in levels:
            if coarse:
                a = drift_factor(k, cfg.theta, 2 * self.h)
                j = np.arange(M)[:, None] // 2
                w = a ** (M // 2 - 1 - j) * np.where(np.arange(M)[:, None] % 2 == 0, self.decay, 1.0)
                gains.append(a ** (M // 2))
            else:
                a = drift_factor(k, cfg.theta, self.h)
                w = a ** (M - 1 - np.arange(M)[:, None])
                gains.append(a**M)
            weights.append(w)
        var = self.unit_sd**2
        cov = np.array([[np.sum(wi * wj, axis=0) * var for wj in weights] for wi in weights])
        chol = np.zeros_like(cov)
        chol[0, 0] = np.sqrt(cov[0, 0])
        if len(levels) == 2:
            chol[1, 0] = cov[1, 0] / chol[0, 0]
            chol[1, 1] = np.sqrt(np.maximum(cov[1, 1] - chol[1, 0] ** 2, 0.0))
        self.interval_gain = np.array(gains)
        self.interval_cov = cov
        self.interval_chol = chol

    def initial(self, batch: tuple[int, ...] = ()) -> list[np.ndarray]:
        """Point-mass initial law u_{k,0} = u0 for every component."""
        return [np.full(batch + (K,), float(self.config.u0)) for K in self.n_modes]

    def fine_noise(self, batch: tuple[int, ...], sigma, rng: np.random.Generator) -> np.ndarray:
        """Scaled fine-level increments, shape ``batch + (M, K)``."""
        sig = np.asarray(sigma, dtype=float)[..., None, None]
        return sig * self.unit_sd * rng.standard_normal(batch + (self.M, self.K))

    def propagate_substeps(self, states, sigma, rng: np.random.Generator, noise=None):
        """Advance one observation interval step by step from the fine noise array."""
        batch = states[0].shape[:-1]
        if noise is None:
            noise = self.fine_noise(batch, sigma, rng)
        out = []
        theta = self.config.theta
        for u, K, coarse in zip(states, self.n_modes, self.time_coarse):
            r = noise[..., :K]
            h = self.h
            if coarse:
                r = aggregate_noise(r, self.decay[:K])
                h = 2 * self.h
            for i in range(r.shape[-2]):
                u = euler_step(u, theta, h, r[..., i, :])
            out.append(u)
        return out

    def propagate(self, states, sigma, rng: np.random.Generator):
        """Advance one observation interval, sampling the interval endpoints directly.

        Equal in law to :meth:`propagate_substeps` but draws one (or two, when a
        coarse-time component is present) Gaussian per mode instead of M.
        """
        batch = states[0].shape[:-1]
        n_lev = self.interval_chol.shape[0]
        z = rng.standard_normal((n_lev,) + batch + (self.K,))
        sig = np.asarray(sigma, dtype=float)[..., None]
        chol = self.interval_chol
        agg = [(sig * chol[0, 0]) * z[0]]
        if n_lev == 2:
            agg.append((sig * chol[1, 0]) * z[0])
            agg[1] += (sig * chol[1, 1]) * z[1]
        out = []
        for u, K, coarse in zip(states, self.n_modes, self.time_coarse):
            lev = 1 if coarse else 0
            x = self.interval_gain[lev, :K] * u
            x += agg[lev][..., :K]
            out.append(x)
        return out

    def log_g_components(self, states, y) -> np.ndarray:
        """Per-component log g, stacked on a trailing axis of length k."""
        inv = 0.5 / self.config.tau2
        y = np.asarray(y, dtype=float)
        cols = []
        for u, K in zip(states, self.n_modes):
            resid = y - u @ self.obs_matrix[:K]
            cols.append(-inv * np.sum(resid * resid, axis=-1))
        return np.stack(cols, axis=-1)


def coupled_initial(expansion: DodExpansion, config: ModelConfig) -> list[np.ndarray]:
    return CoupledKernel(expansion, config).initial()


def coupled_transition(states, sigma, expansion: DodExpansion, config: ModelConfig, rng, kernel=None):
    """Reference coupled transition over one interval (fine-noise substeps)."""
    kernel = kernel or CoupledKernel(expansion, config)
    if len(states) != expansion.k or any(
        np.shape(u)[-1] != K for u, K in zip(states, kernel.n_modes)
    ):
        raise ValueError("state does not match the expansion's levels")
    return kernel.propagate_substeps(states, sigma, rng)


def log_g_check(states, y, config: ModelConfig) -> np.ndarray:
    """Dominating potential: the max of the component log-likelihoods."""
    return np.max(np.stack([log_g(u, y, config) for u in states], axis=-1), axis=-1)


def simulate_data(config: ModelConfig, alpha_data: Sequence[int] | None = None, seed: int | None = None) -> np.ndarray:
    """Observations y_1..y_n at t = n delta, shape ``(n_obs, n_locations)``."""
    alpha = as_index(alpha_data if alpha_data is not None else config.data_level)
    rng = seed_stream(config.seed if seed is None else seed)
    kernel = CoupledKernel(single_level(alpha), config)
    state = kernel.initial()
    ys = np.empty((config.n_obs, len(config.obs_locations)))
    for n in range(config.n_obs):
        state = kernel.propagate_substeps(state, config.sigma, rng)
        noise = rng.standard_normal(len(config.obs_locations)) * math.sqrt(config.tau2)
        ys[n] = state[0] @ kernel.obs_matrix + noise
    return ys


def single_level(alpha: MultiIndex) -> DodExpansion:
    """A one-term expansion used to run an uncoupled chain at ``alpha``."""
    alpha = as_index(alpha)
    return DodExpansion(alpha, (alpha,), ())



def write_observations(y: np.ndarray, path: str | Path) -> None:
    y = np.atleast_2d(y)
    header = "n," + ",".join(f"y{i + 1}" for i in range(y.shape[1]))
    rows = [header] + [f"{n + 1}," + ",".join(repr(float(v)) for v in row) for n, row in enumerate(y)]
    Path(path).write_text("\n".join(rows) + "\n")


def read_observations(path: str | Path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("n,"):
        raise ConfigError(f"{path}: expected header 'n,y1,...'")
    rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    arr = np.array(rows, dtype=float).reshape(len(rows), -1)
    if not np.array_equal(arr[:, 0], np.arange(1, len(rows) + 1)):
        raise ConfigError(f"{path}: time indices must run 1..n")
    return arr[:, 1:]


@dataclass(frozen=True)
class GammaPrior:
    """Gamma(shape, scale) prior on the noise amplitude sigma."""

    shape: float = 1.0
    scale: float = math.sqrt(0.1)

    @classmethod
    def from_config(cls, config: ModelConfig) -> "GammaPrior":
        return cls(config.prior_shape, config.prior_scale)

    @property
    def mean(self) -> float:
        return self.shape * self.scale

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        safe = np.where(x > 0, x, 1.0)
        out = (
            (self.shape - 1.0) * np.log(safe)
            - x / self.scale
            - math.lgamma(self.shape)
            - self.shape * math.log(self.scale)
        )
        valid = (x > 0) | ((x == 0) & (self.shape == 1.0))
        return np.where(valid, out, -np.inf)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.gamma(self.shape, self.scale, size=size)
