"""Fixed-budget best-arm identification when every arm shares a shifting environment offset."""

from .env import BanditInstance, ChangePointSpec, InstanceConfig, ObservationStream, ShiftSpec, make_instance, true_best
from .errors import (
    ConfigError,
    DisconnectedDesignError,
    OutOfOrderEnvironmentError,
    SingularGramError,
    TieInTruthError,
)
from .estimator import ShiftOLSRegressor
from .harness import ExperimentConfig, MetricSeries, load_config, run_experiment, run_replication, write_csv
from .ols import OlsFit, fit_ols, fit_ols_separated
from .policies import POLICY_KINDS, PolicySpec, make_policy, select_best
from .stats import ArmGraph, ObservationLog, SufficientStats

__version__ = "0.1.0"

__all__ = [
    "ArmGraph",
    "BanditInstance",
    "ChangePointSpec",
    "ConfigError",
    "DisconnectedDesignError",
    "ExperimentConfig",
    "InstanceConfig",
    "MetricSeries",
    "ObservationLog",
    "ObservationStream",
    "OlsFit",
    "OutOfOrderEnvironmentError",
    "POLICY_KINDS",
    "PolicySpec",
    "ShiftOLSRegressor",
    "ShiftSpec",
    "SingularGramError",
    "SufficientStats",
    "TieInTruthError",
    "fit_ols",
    "fit_ols_separated",
    "load_config",
    "make_instance",
    "make_policy",
    "run_experiment",
    "run_replication",
    "select_best",
    "true_best",
    "write_csv",
]
