"""Continuous-time neural hazard models for survival analysis."""

__version__ = "0.1.0"

from .data import Dataset, Feature, PreprocessStats, apply_preprocess, fit_preprocess
from .discretization import TimeGrid, global_grid, per_sample_grid, trapezoid
from .metrics import MetricReport
from .model import CifCurve, HazardNetwork, SurvivalCurve, predict_cif, predict_survival_curve
from .training import TrainConfig, cross_validate, train

__all__ = [
    "__version__",
    "Dataset",
    "Feature",
    "PreprocessStats",
    "apply_preprocess",
    "fit_preprocess",
    "TimeGrid",
    "global_grid",
    "per_sample_grid",
    "trapezoid",
    "MetricReport",
    "CifCurve",
    "HazardNetwork",
    "SurvivalCurve",
    "predict_cif",
    "predict_survival_curve",
    "TrainConfig",
    "cross_validate",
    "train",
]
