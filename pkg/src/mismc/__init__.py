"""Multi-index SMC^2 and PMCMC for a partially observed stochastic heat equation."""

from .errors import ConfigError, NumericalFailure
from .kalman_oracle import kalman_loglik, posterior_quadrature, truth_table
from .mi_estimator import EstimateRecord, RateFit, allocate_n, combine, fit_rates
from .multi_index import DodExpansion, apply_dod, dod_expand, tensor_index_set, total_degree_index_set
from .particle_filter import pf_init, pf_step, run_particle_filter
from .pmcmc import pmmh_step, run_mi_pmcmc, run_pmmh
from .seeding import seed_stream
from .smc2 import dod_estimate, eta_estimate, run_smc2, smc2_advance, smc2_init
from .spde_model import CoupledKernel, GammaPrior, ModelConfig, load_config, simulate_data

__all__ = [
    "ConfigError",
    "CoupledKernel",
    "DodExpansion",
    "EstimateRecord",
    "GammaPrior",
    "ModelConfig",
    "NumericalFailure",
    "RateFit",
    "allocate_n",
    "apply_dod",
    "combine",
    "dod_estimate",
    "dod_expand",
    "eta_estimate",
    "fit_rates",
    "kalman_loglik",
    "load_config",
    "pf_init",
    "pf_step",
    "pmmh_step",
    "posterior_quadrature",
    "run_mi_pmcmc",
    "run_particle_filter",
    "run_pmmh",
    "run_smc2",
    "seed_stream",
    "simulate_data",
    "smc2_advance",
    "smc2_init",
    "tensor_index_set",
    "total_degree_index_set",
    "truth_table",
]
