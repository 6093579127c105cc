"""Federated driver drowsiness detection: numpy CNNs, FedAvg, wire protocol, experiment runner."""

from .errors import FednodError
from .experiment import DatasetSource, ExperimentConfig, RunSummary, run_experiment, sweep
from .federation import ClientUpdate, RoundReport, ServerState, evaluate, fedavg_aggregate, local_train, run_round
from .models import ModelSpec, ModelWeights, build_ddd2d, build_ddd3d, build_model
from .nn.optim import Hyperparameters

__version__ = "0.1.0"

__all__ = [
    "ClientUpdate",
    "DatasetSource",
    "ExperimentConfig",
    "FednodError",
    "Hyperparameters",
    "ModelSpec",
    "ModelWeights",
    "RoundReport",
    "RunSummary",
    "ServerState",
    "build_ddd2d",
    "build_ddd3d",
    "build_model",
    "evaluate",
    "fedavg_aggregate",
    "local_train",
    "run_experiment",
    "run_round",
    "sweep",
]
