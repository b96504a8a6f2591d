"""Experiment harness: config, dataset generation, training, evaluation, reports."""
from .config import ExperimentConfig, load_config, resolve
from .pipeline import evaluate, fit_controller, generate_dataset, load_dataset, report, train

__all__ = ["ExperimentConfig", "load_config", "resolve", "generate_dataset", "load_dataset",
           "fit_controller", "train", "evaluate", "report"]
