"""Reduced-order surrogates of graph dynamics corrected by a particle filter.

The pipeline builds a POD reduced model (or a small neural ODE), sparsifies
the graph by dynamic optimization, learns a clustered Markov error model and
assimilates surrogate outputs against a sparse-graph reference.
"""
from .assimilation import FilterConfig, FilterDivergence, filter_run, rmse
from .dynamics import BrusselatorSystem, DiffusionSystem, Trajectory, integrate
from .experiments import ExperimentConfig, Report, StageError, run_experiment
from .graph import WeightedGraph, generate_er, laplacian
from .pod import PodBasis, build_pod

__all__ = [
    "BrusselatorSystem", "DiffusionSystem", "ExperimentConfig", "FilterConfig",
    "FilterDivergence", "PodBasis", "Report", "StageError", "Trajectory", "WeightedGraph",
    "build_pod", "filter_run", "generate_er", "integrate", "laplacian", "rmse",
    "run_experiment",
]
__version__ = "0.1.0"
