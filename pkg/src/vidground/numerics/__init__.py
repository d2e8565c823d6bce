"""Minimal float64 autodiff engine with MAC tracing."""

from . import ops
from .gradcheck import check_directional, check_gradients, check_sampled, numerical_grad, relative_error
from .ops import (
    attention,
    conv1d,
    depthwise_conv1d,
    layernorm,
    masked_softmax,
    matmul,
    softmax,
)
from .tensor import DimensionError, Tensor, as_tensor, grad_enabled, no_grad, parameter
from .trace import MacTrace, mac_count, scope, trace_macs

__all__ = [
    "DimensionError",
    "MacTrace",
    "Tensor",
    "as_tensor",
    "attention",
    "check_directional",
    "check_gradients",
    "check_sampled",
    "conv1d",
    "depthwise_conv1d",
    "grad_enabled",
    "layernorm",
    "mac_count",
    "masked_softmax",
    "matmul",
    "no_grad",
    "numerical_grad",
    "ops",
    "parameter",
    "relative_error",
    "scope",
    "softmax",
    "trace_macs",
]
