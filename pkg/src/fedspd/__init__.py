"""Deterministic simulator for differentially private federated learning.

The main algorithm is a stochastic primal-dual consensus method with
Gaussian-perturbed uploads; DP-SGD, DP-FedAvg and DP-ADMM are included for
comparison. See the command line entry point ``fedspd`` or
:func:`run_experiment` for programmatic use.
"""

__version__ = "0.1.0"

from .bench import ReferenceSolution, alfv, consensus_gap, h_criterion, solve_reference
from .config import ConfigError, ExperimentConfig, default_config, load_config
from .datastore import DataIntegrityError, Dataset, generate_synthetic, load_adult, load_libsvm
from .engine import RunResult, Simulation, gamma_schedule, load_data, run_experiment
from .privacy import (
    PrivacyLedger,
    ledger_spent_epsilon,
    log_moment,
    noise_scale,
    per_round_epsilon,
    sensitivity,
    total_privacy_loss_closed_form,
)

__all__ = [
    "__version__",
    "ConfigError",
    "DataIntegrityError",
    "Dataset",
    "ExperimentConfig",
    "PrivacyLedger",
    "ReferenceSolution",
    "RunResult",
    "Simulation",
    "alfv",
    "consensus_gap",
    "default_config",
    "gamma_schedule",
    "generate_synthetic",
    "h_criterion",
    "ledger_spent_epsilon",
    "load_adult",
    "load_config",
    "load_data",
    "load_libsvm",
    "log_moment",
    "noise_scale",
    "per_round_epsilon",
    "run_experiment",
    "sensitivity",
    "solve_reference",
    "total_privacy_loss_closed_form",
]
