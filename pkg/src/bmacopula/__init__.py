"""Ensemble BMA marginals joined by a Gaussian copula, with multivariate verification."""

from bmacopula.__version__ import VERSION
from bmacopula.copula import (
    CorrelationMatrix,
    estimate_correlation,
    independence_sample,
    latent_from_observation,
    sample_joint,
)
from bmacopula.data import Dataset, generate_synthetic, load_dataset, rolling_window, save_dataset
from bmacopula.marginals import PredictiveMarginal, TrainingSet, fit_marginal

__all__ = [
    "VERSION",
    "CorrelationMatrix",
    "Dataset",
    "PredictiveMarginal",
    "TrainingSet",
    "estimate_correlation",
    "fit_marginal",
    "generate_synthetic",
    "independence_sample",
    "latent_from_observation",
    "load_dataset",
    "rolling_window",
    "sample_joint",
    "save_dataset",
]
