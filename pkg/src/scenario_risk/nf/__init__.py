"""Masked autoregressive normalizing flow."""

from .flow import FlowModel, flow_gradient, flow_log_density, flow_sample
from .layers import FlowBatchNorm, MafTransform, MaskedDenseLayer, PermutationLayer
from .train import Adam, TrainConfig, TrainingFailedError, train_flow

__all__ = [
    "Adam",
    "FlowBatchNorm",
    "FlowModel",
    "MafTransform",
    "MaskedDenseLayer",
    "PermutationLayer",
    "TrainConfig",
    "TrainingFailedError",
    "flow_gradient",
    "flow_log_density",
    "flow_sample",
    "train_flow",
]
