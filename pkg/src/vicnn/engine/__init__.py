"""Numpy CNN engine: layer ops, Adam, and model execution."""

from vicnn.engine.adam import AdamState, adam_step
from vicnn.engine.network import Tape, backward, forward, identity_params, init_params, predict
from vicnn.engine.ops import (
    ConvParams,
    conv2d_backward,
    conv2d_forward,
    maxpool2,
    maxpool2_backward,
    mse_loss,
    relu,
    relu_backward,
    residual_add,
    residual_add_backward,
    sigmoid,
    sigmoid_backward,
    upsample_nearest2,
    upsample_nearest2_backward,
)

__all__ = [
    "AdamState", "ConvParams", "Tape", "adam_step", "backward", "conv2d_backward", "conv2d_forward",
    "forward", "identity_params", "init_params", "maxpool2", "maxpool2_backward", "mse_loss", "predict",
    "relu", "relu_backward", "residual_add", "residual_add_backward", "sigmoid", "sigmoid_backward",
    "upsample_nearest2", "upsample_nearest2_backward",
]
