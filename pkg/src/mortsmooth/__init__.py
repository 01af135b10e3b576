"""Bayesian smoothing of stratified mortality counts with Gaussian Markov random field priors."""

__version__ = "0.1.0"

from .confounding import decorrelate_covariate, rate_ratio, standardize_covariate
from .data import Dataset, crude_rates, ingest_dataset, simulate_dataset
from .graphs import (AdjacencyGraph, StructureMatrix, icar_structure, interaction_structure,
                     load_adjacency, rw_structure, scale_structure, spain_provinces)
from .inference import FitResult, compute_dic, compute_waic, fit_model, gaussian_approx
from .model import ModelSpec, assemble_model, build_model, constraint_set, parse_model_spec

__all__ = [
    "AdjacencyGraph", "Dataset", "FitResult", "ModelSpec", "StructureMatrix", "assemble_model",
    "build_model", "compute_dic", "compute_waic", "constraint_set", "crude_rates",
    "decorrelate_covariate", "fit_model", "gaussian_approx", "icar_structure", "ingest_dataset",
    "interaction_structure", "load_adjacency", "parse_model_spec", "rate_ratio", "rw_structure",
    "scale_structure", "simulate_dataset", "spain_provinces", "standardize_covariate",
]
