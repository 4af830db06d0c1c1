"""Operator networks for backstepping kernels and control laws."""
from .deeponet import DeepOperatorModel, KernelPINN
from .model_io import load_model, save_model
from .network import AdamState, DenseNetwork, adam_update
from .training import (
    PINNProblem,
    TrainConfig,
    train_control_law,
    train_no,
    train_pinn,
    train_pino,
)

__all__ = [
    "AdamState",
    "DeepOperatorModel",
    "DenseNetwork",
    "KernelPINN",
    "PINNProblem",
    "TrainConfig",
    "adam_update",
    "load_model",
    "save_model",
    "train_control_law",
    "train_no",
    "train_pinn",
    "train_pino",
]
