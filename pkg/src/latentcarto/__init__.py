"""Measure and remove geometric distortion in 2-D latent spaces.

A meaning field sampled on a latent grid gives a distortion measure; a
diffusion cartogram warps the grid so that measure becomes uniform.
"""

from .cartogram import DiffusionParams, TransformField, forward_map, identity_transform, inverse_map, solve_transform
from .errors import FormatError, InputError, LatentCartoError, OutOfDomainError, SolverError
from .evaluation import EvalReport, equalization_report, fit_classifier_field, histogram_entropy, kmeans_f1
from .formats import load_embeddings, load_field, save_embeddings, save_field
from .geometry import LatentPath, distance_field, pseudo_geodesic, transform_embeddings, transformed_path_length
from .grid import EmbeddingSet, GridSpec, MeaningField, MeasureField, build_grid
from .measures import gaussian_blur, heuristic_measure, jsd_distance, relax_to_mean, riemannian_measure
from .render import RenderSpec, render_scene

__version__ = "0.1.0"

__all__ = [
    "DiffusionParams",
    "EmbeddingSet",
    "EvalReport",
    "FormatError",
    "GridSpec",
    "InputError",
    "LatentCartoError",
    "LatentPath",
    "MeaningField",
    "MeasureField",
    "OutOfDomainError",
    "RenderSpec",
    "SolverError",
    "TransformField",
    "build_grid",
    "distance_field",
    "equalization_report",
    "fit_classifier_field",
    "forward_map",
    "gaussian_blur",
    "heuristic_measure",
    "histogram_entropy",
    "identity_transform",
    "inverse_map",
    "jsd_distance",
    "kmeans_f1",
    "load_embeddings",
    "load_field",
    "pseudo_geodesic",
    "relax_to_mean",
    "render_scene",
    "riemannian_measure",
    "save_embeddings",
    "save_field",
    "solve_transform",
    "transform_embeddings",
    "transformed_path_length",
]
