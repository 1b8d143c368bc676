"""Reverse-mode automatic differentiation over float64 numpy arrays."""

from . import checkpoint, ops
from .layers import (BatchNorm, DepthwiseSpatialConv, Dropout, LayerNorm, Linear, Module,
                     MultiHeadSelfAttention, SeparableConv, TemporalConv,
                     TransformerEncoderLayer, glorot_uniform)
from .optim import NonFiniteGradient, RAdam, radam_update, rho
from .tensor import Parameter, ShapeMismatch, Tensor, as_tensor, grad_enabled, no_grad
