"""Minimal numpy neural primitives with analytic gradients."""

from .autograd import Tensor, no_grad
from .gradcheck import finite_difference_grad, grad, max_relative_error
from .layers import (
    AttentionMask,
    attention_forward,
    causal_conv1d,
    sinusoidal_positions,
    transformer_block_forward,
)
from .params import ParamSet, load_checkpoint, save_checkpoint

__all__ = [
    "AttentionMask", "ParamSet", "Tensor", "attention_forward", "causal_conv1d",
    "finite_difference_grad", "grad", "load_checkpoint", "max_relative_error", "no_grad",
    "save_checkpoint", "sinusoidal_positions", "transformer_block_forward",
]
