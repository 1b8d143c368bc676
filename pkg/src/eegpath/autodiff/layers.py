"""Parameterised layers built on the differentiable ops."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Parameter


class Module:
    """Container of parameters, buffers and sub-modules.

    Parameters and sub-modules are discovered from attributes in
    assignment order, which fixes the naming used by checkpoints.
    """

    def __init__(self):
        object.__setattr__(self, "training", True)
        object.__setattr__(self, "_order", [])

    def __setattr__(self, name, value):
        if name not in self._order and isinstance(value, (Parameter, Module, list)):
            self._order.append(name)
        object.__setattr__(self, name, value)

    def _children(self):
        for name in self._order:
            value = getattr(self, name)
            if isinstance(value, list):
                for i, item in enumerate(value):
                    yield f"{name}.{i}", item
            else:
                yield name, value

    def named_parameters(self, prefix=""):
        for name, value in self._children():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, value in getattr(self, "buffers", {}).items():
            yield prefix + name, value
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict):
        for name, p in self.named_parameters():
            if state[name].shape != p.data.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.data.shape}")
            p.data = np.array(state[name], dtype=np.float64)
        for name, b in self.named_buffers():
            b[...] = state[name]

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Linear(Module):
    def __init__(self, n_in, n_out, bias=True, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.weight = Parameter(glorot_uniform(rng, (n_out, n_in), n_in, n_out), "weight")
        self.bias = Parameter(np.zeros(n_out), "bias") if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, n_channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(n_channels), "gamma")
        self.beta = Parameter(np.zeros(n_channels), "beta")
        self.momentum, self.eps = momentum, eps
        self.buffers = {"running_mean": np.zeros(n_channels),
                        "running_var": np.ones(n_channels)}

    def forward(self, x):
        return ops.batch_norm(x, self.gamma, self.beta, self.buffers["running_mean"],
                              self.buffers["running_var"], self.training, self.momentum,
                              self.eps)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(dim), "gamma")
        self.beta = Parameter(np.zeros(dim), "beta")
        self.eps = eps

    def forward(self, x):
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class Dropout(Module):
    """Dropout with its own seeded generator; identity in eval mode."""

    def __init__(self, p, seed=0):
        super().__init__()
        self.p = p
        self.rng = np.random.default_rng(seed)

    def forward(self, x):
        return ops.dropout(x, self.p, self.rng, self.training)


class TemporalConv(Module):
    def __init__(self, n_filters, kernel, padding, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.weight = Parameter(glorot_uniform(rng, (n_filters, kernel), kernel, n_filters * kernel),
                                "weight")
        self.padding = padding

    def forward(self, x):
        return ops.conv2d_temporal(x, self.weight, self.padding)


class DepthwiseSpatialConv(Module):
    def __init__(self, n_filters, n_rows, depth_multiplier, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        n_out = n_filters * depth_multiplier
        self.weight = Parameter(glorot_uniform(rng, (n_out, n_rows), n_rows, depth_multiplier * n_rows),
                                "weight")
        self.depth_multiplier = depth_multiplier

    def forward(self, x):
        return ops.conv2d_depthwise_spatial(x, self.weight, self.depth_multiplier)


class SeparableConv(Module):
    def __init__(self, n_in, n_out, kernel, padding, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.depthwise = Parameter(glorot_uniform(rng, (n_in, kernel), kernel, kernel), "depthwise")
        self.pointwise = Parameter(glorot_uniform(rng, (n_out, n_in), n_in, n_out), "pointwise")
        self.padding = padding

    def forward(self, x):
        return ops.separable_conv(x, self.depthwise, self.pointwise, self.padding)


class MultiHeadSelfAttention(Module):
    """Packed input projection (3d x d, bias) and output projection (d x d, bias)."""

    def __init__(self, dim, n_heads, dropout=0.0, rng=None, seed=0):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_weight = Parameter(glorot_uniform(rng, (3 * dim, dim), dim, 3 * dim), "in_weight")
        self.in_bias = Parameter(np.zeros(3 * dim), "in_bias")
        self.out_weight = Parameter(glorot_uniform(rng, (dim, dim), dim, dim), "out_weight")
        self.out_bias = Parameter(np.zeros(dim), "out_bias")
        self.n_heads, self.p = n_heads, dropout
        self.rng = np.random.default_rng(seed)

    def forward(self, x, key_mask=None):
        return ops.multi_head_self_attention(x, self.in_weight, self.in_bias, self.out_weight,
                                             self.out_bias, self.n_heads, key_mask, self.p,
                                             self.rng, self.training)


class TransformerEncoderLayer(Module):
    """Post-norm encoder layer: LN(x + SA(x)), then LN(x + FF(x)); ReLU FF."""

    def __init__(self, dim=288, n_heads=8, ff_dim=2048, dropout=0.1, rng=None, seed=0):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.attn = MultiHeadSelfAttention(dim, n_heads, dropout, rng, seed)
        self.ff1 = Linear(dim, ff_dim, rng=rng)
        self.ff2 = Linear(ff_dim, dim, rng=rng)
        self.norm1 = LayerNorm(dim)
        self.norm2 = LayerNorm(dim)
        self.drop_attn = Dropout(dropout, seed + 1)
        self.drop_ff = Dropout(dropout, seed + 2)
        self.drop_out = Dropout(dropout, seed + 3)

    def forward(self, x, key_mask=None):
        x = self.norm1(ops.add(x, self.drop_attn(self.attn(x, key_mask))))
        ff = self.ff2(self.drop_ff(ops.relu(self.ff1(x))))
        return self.norm2(ops.add(x, self.drop_out(ff)))
