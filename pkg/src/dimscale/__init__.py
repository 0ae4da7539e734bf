"""Dimensionality assessment of binary questionnaires with latent-class 2-PL models."""

__version__ = "0.1.0"

from .clustering import (
    ClusteringPath,
    ClusteringStep,
    Dendrogram,
    best_merge,
    build_dendrogram,
    candidate_merges,
    run_clustering,
)
from .estimation import EmConfig, FitResult, em_step, fit, initialize, parameter_count
from .model import (
    ItemPartition,
    ModelParameters,
    ResponseMatrix,
    ValidationError,
    dataset_log_likelihood,
    dimension_frequency,
    pattern_log_likelihood,
    posterior_class_probabilities,
    success_probability,
)
from .selection import aic, bic, criterion_report, cut_by_min_bic, lr_statistic

__all__ = [
    "ClusteringPath",
    "ClusteringStep",
    "Dendrogram",
    "EmConfig",
    "FitResult",
    "ItemPartition",
    "ModelParameters",
    "ResponseMatrix",
    "ValidationError",
    "aic",
    "best_merge",
    "bic",
    "build_dendrogram",
    "candidate_merges",
    "criterion_report",
    "cut_by_min_bic",
    "dataset_log_likelihood",
    "dimension_frequency",
    "em_step",
    "fit",
    "initialize",
    "lr_statistic",
    "parameter_count",
    "pattern_log_likelihood",
    "posterior_class_probabilities",
    "run_clustering",
    "success_probability",
]
