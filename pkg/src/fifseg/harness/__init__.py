"""Training, evaluation, ablation and gradient-check drivers."""

from .ablate import AblationTable, ablate
from .config import TrainConfig
from .gradcheck import gradcheck_suite
from .train import RunRecord, TrainResult, evaluate, evaluate_model, train

__all__ = [
    "AblationTable",
    "RunRecord",
    "TrainConfig",
    "TrainResult",
    "ablate",
    "evaluate",
    "evaluate_model",
    "gradcheck_suite",
    "train",
]
