"""Minimal deterministic CNN kernels and the Adam optimizer."""

from .layers import (
    DTYPE,
    Layer,
    LayerKind,
    conv_backward,
    conv_forward,
    conv_layer,
    dense_backward,
    dense_forward,
    dense_layer,
    dropout,
    dropout_backward,
    dropout_layer,
    flatten_layer,
    maxpool_backward,
    maxpool_forward,
    maxpool_layer,
    relu,
    relu_backward,
    relu_layer,
    softmax,
    softmax_cross_entropy,
)
from .optim import AdamState, Hyperparameters, adam_step

__all__ = [
    "DTYPE",
    "AdamState",
    "Hyperparameters",
    "Layer",
    "LayerKind",
    "adam_step",
    "conv_backward",
    "conv_forward",
    "conv_layer",
    "dense_backward",
    "dense_forward",
    "dense_layer",
    "dropout",
    "dropout_backward",
    "dropout_layer",
    "flatten_layer",
    "maxpool_backward",
    "maxpool_forward",
    "maxpool_layer",
    "relu",
    "relu_backward",
    "relu_layer",
    "softmax",
    "softmax_cross_entropy",
]
