"""Optimization landscape of noise-contrastive estimation for exponential families.

Population and minibatch NCE / eNCE objectives, first and second order
optimizers, and numerical checks of curvature and flatness bounds.
"""

from .estimator import NCEDensityEstimator
from .exceptions import (
    AlreadyOptimal,
    ConfigError,
    DivergenceError,
    DomainError,
    NCELandscapeError,
    QuadratureConvergenceError,
    SingularHessianError,
    UnderflowError,
)
from .expfam import DiagGaussian, GaussianMean1D, TauParam, normalized_tau, tau_of_theta
from .landscape import CertifySetup, LandscapeReport, certify
from .objective import Batch, ClipPolicy, Evaluation, LossKind, MonteCarlo, Objective, Quadrature
from .optim import AlgoConfig, Trace, run

__version__ = "0.1.0"

__all__ = [
    "AlgoConfig",
    "AlreadyOptimal",
    "Batch",
    "CertifySetup",
    "ClipPolicy",
    "ConfigError",
    "DiagGaussian",
    "DivergenceError",
    "DomainError",
    "Evaluation",
    "GaussianMean1D",
    "LandscapeReport",
    "LossKind",
    "MonteCarlo",
    "NCEDensityEstimator",
    "NCELandscapeError",
    "Objective",
    "Quadrature",
    "QuadratureConvergenceError",
    "SingularHessianError",
    "TauParam",
    "Trace",
    "UnderflowError",
    "certify",
    "normalized_tau",
    "run",
    "tau_of_theta",
]
