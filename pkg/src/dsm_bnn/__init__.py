"""Dirichlet scale mixture shrinkage priors for Bayesian neural networks and linear regression."""

from .bnn import Model, NetworkWeights, Posterior, forward, grad_log_posterior, log_posterior
from .layout import Layout, LinearShape, NetworkShape, ParameterVector
from .nuts import SamplerConfig, Trace, run_nuts
from .priors import FAMILIES, PriorSpec

__version__ = "0.1.0"

__all__ = [
    "FAMILIES", "Layout", "LinearShape", "Model", "NetworkShape", "NetworkWeights", "ParameterVector",
    "Posterior", "PriorSpec", "SamplerConfig", "Trace", "forward", "grad_log_posterior",
    "log_posterior", "run_nuts",
]
