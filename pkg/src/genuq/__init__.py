"""Generative posterior sampling for inverse problems.

A conditional generator ``x = G(y, z)`` is trained on labeled triples produced
by a training-free probability-flow ODE, then sampled with fresh ``z`` to give
ensemble forecasts of the parameters behind an observation ``y``.
"""

from .dataset import Dataset, DataError, Scaler, fit_scaler, load_csv, make_bimodal, split
from .evaluate import EnsembleForecast, UndefinedMetric, ensemble, posterior_summary, r2
from .flow import FlowConfig, Triples, generate_labels, integrate
from .network import Architecture, GeneratorModel, forward
from .reduce import LinearReducer
from .schedule import Schedule
from .score import LikelihoodModel, MiniBatch, score_estimate
from .trainer import TrainConfig, TrainReport, load_checkpoint, save_checkpoint, train
from .tuner import SearchSpace, run_search

__version__ = "0.1.0"

__all__ = [
    "Architecture", "DataError", "Dataset", "EnsembleForecast", "FlowConfig", "GeneratorModel",
    "LikelihoodModel", "LinearReducer", "MiniBatch", "Scaler", "Schedule", "SearchSpace",
    "TrainConfig", "TrainReport", "Triples", "UndefinedMetric", "ensemble", "fit_scaler",
    "forward", "generate_labels", "integrate", "load_checkpoint", "load_csv", "make_bimodal",
    "posterior_summary", "r2", "run_search", "save_checkpoint", "score_estimate", "split", "train",
]
