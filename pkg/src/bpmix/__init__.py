"""Bayesian estimation of population size from zero-truncated counts.

The mixing distribution of Poisson rates is described by its first ``M*``
moments, sampled on the canonical-moment chart by Metropolis-within-Gibbs.
"""

from .estimators import EstimateReport, chao_lower_bound, coverage_and_error, summarize
from .freq_data import DataError, FrequencyTable, builtin_datasets, load_dataset, right_truncate
from .mcmc import Chain, SamplerConfig, SamplerError, acf, ess, run_chains, run_sampler
from .model import ModelParams, PriorConfig, log_posterior
from .moments import canonical_to_ordinary, ordinary_to_canonical

__version__ = "0.1.0"

__all__ = [
    "Chain",
    "DataError",
    "EstimateReport",
    "FrequencyTable",
    "ModelParams",
    "PriorConfig",
    "SamplerConfig",
    "SamplerError",
    "acf",
    "builtin_datasets",
    "canonical_to_ordinary",
    "chao_lower_bound",
    "coverage_and_error",
    "ess",
    "load_dataset",
    "log_posterior",
    "ordinary_to_canonical",
    "right_truncate",
    "run_chains",
    "run_sampler",
    "summarize",
]
