"""Nonparametric maximum-likelihood estimation of population mixing
distributions by simulated annealing."""

from .anneal import SAConfig, anneal
from .dfunction import DResult, d_phi, d_theta
from .io import load_dataset, write_dataset
from .likelihood import LikelihoodMatrix, build_matrix, log_likelihood
from .models import get_model
from .osat import fit_osat, fit_subject
from .simulate import generate_synthetic
from .solver import NPSAResult, fit
from .types import Bounds, Candidate, DatasetError, DiscreteDistribution, DoseEvent, Subject
from .weights import optimize_weights, prune_and_merge

__all__ = [
    "Bounds",
    "Candidate",
    "DResult",
    "DatasetError",
    "DiscreteDistribution",
    "DoseEvent",
    "LikelihoodMatrix",
    "NPSAResult",
    "SAConfig",
    "Subject",
    "anneal",
    "build_matrix",
    "d_phi",
    "d_theta",
    "fit",
    "fit_osat",
    "fit_subject",
    "generate_synthetic",
    "get_model",
    "load_dataset",
    "log_likelihood",
    "optimize_weights",
    "prune_and_merge",
    "write_dataset",
]
