"""Federated learning simulator with a trustworthiness scoring engine."""

from .errors import ConfigError, DivergenceError, InputError
from .experiment import ExperimentPreset, evaluate, load_config, load_preset, simulate
from .factsheet import FactSheet, autofill_from_run, evaluate_completeness
from .federation import FederationConfig, RunStatistics, run
from .model import ArchitectureDescriptor, ModelParams
from .scoring import TrustReport, WeightConfig, aggregate, normalize, render

__version__ = "0.1.0"

__all__ = [
    "ArchitectureDescriptor", "ConfigError", "DivergenceError", "ExperimentPreset", "FactSheet",
    "FederationConfig", "InputError", "ModelParams", "RunStatistics", "TrustReport", "WeightConfig",
    "aggregate", "autofill_from_run", "evaluate", "evaluate_completeness", "load_config", "load_preset",
    "normalize", "render", "run", "simulate",
]
