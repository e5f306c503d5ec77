"""Dirichlet-process mixtures of multinomial-logit experts for classification."""

from .data import SimSpec, generate, load_dataset, load_hierarchy
from .engine import ChainConfig, PosteriorSample, run_chain, run_chains
from .metrics import MetricsReport, evaluate
from .model import ClassHierarchy, Dataset, PriorSpec
from .predict import PredictiveReport, posterior_predictive

__version__ = "0.1.0"

__all__ = [
    "ChainConfig",
    "ClassHierarchy",
    "Dataset",
    "MetricsReport",
    "PosteriorSample",
    "PredictiveReport",
    "PriorSpec",
    "SimSpec",
    "evaluate",
    "generate",
    "load_dataset",
    "load_hierarchy",
    "posterior_predictive",
    "run_chain",
    "run_chains",
]
