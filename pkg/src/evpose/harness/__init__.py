"""Experiment harness: data generation, training, evaluation and reports."""

from .config import DatasetConfig, ExperimentConfig, TrainConfig

__all__ = ["DatasetConfig", "ExperimentConfig", "TrainConfig"]
