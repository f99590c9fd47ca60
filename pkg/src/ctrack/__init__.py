"""Confidence-tracking sample selection for learning with noisy labels."""

from ctrack.mk_trend import MKResult, MKState, mk_batch, mk_update, normal_quantile, z_from_state
from ctrack.trajectory import GapHistory
from ctrack.selectors import (
    AumState,
    DistState,
    ct_select,
    fine_select,
    gmm_select,
    union,
)
from ctrack.gmm1d import EmConfig, GMMParams, fit_em, minmax_normalize, posterior_component
from ctrack.evalx import SelectionReport, accuracy, selection_metrics
from ctrack.datasets import PredictionLog, read_predlog, write_predlog
from ctrack.pipeline import ExperimentConfig, SelectionEngine, SelectorConfig, run_experiment
from ctrack.config import load_experiment

__all__ = [
    "AumState",
    "DistState",
    "EmConfig",
    "ExperimentConfig",
    "GMMParams",
    "GapHistory",
    "MKResult",
    "MKState",
    "PredictionLog",
    "SelectionEngine",
    "SelectorConfig",
    "SelectionReport",
    "accuracy",
    "ct_select",
    "fine_select",
    "fit_em",
    "gmm_select",
    "load_experiment",
    "minmax_normalize",
    "mk_batch",
    "mk_update",
    "normal_quantile",
    "posterior_component",
    "read_predlog",
    "run_experiment",
    "selection_metrics",
    "union",
    "write_predlog",
    "z_from_state",
]

__version__ = "0.1.0"
