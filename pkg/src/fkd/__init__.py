"""Framelet graph neural network teachers distilled into MLP students."""
from .analysis import band_energies, dirichlet_energy, perturbed_energy, sensitivity_bound, simplified_energy
from .estimators import (
    FMLPClassifier,
    SimplifiedFrameletClassifier,
    SpatialFrameletClassifier,
    SpectralFrameletClassifier,
)
from .framelet import FrameletTransform, band_adjacencies, build_framelet, tightness_residual
from .graph import Graph, edge_homophily, generate_synthetic, load_graph, normalized_operators, save_graph, split_masks
from .rewiring import balanced_forman_curvature, sdrf_rewire

__version__ = "0.1.0"

__all__ = [
    "FMLPClassifier",
    "FrameletTransform",
    "Graph",
    "SimplifiedFrameletClassifier",
    "SpatialFrameletClassifier",
    "SpectralFrameletClassifier",
    "balanced_forman_curvature",
    "band_adjacencies",
    "band_energies",
    "build_framelet",
    "dirichlet_energy",
    "edge_homophily",
    "generate_synthetic",
    "load_graph",
    "normalized_operators",
    "perturbed_energy",
    "save_graph",
    "sdrf_rewire",
    "sensitivity_bound",
    "simplified_energy",
    "split_masks",
    "tightness_residual",
]
