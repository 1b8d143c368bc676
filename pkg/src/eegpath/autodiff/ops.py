"""Differentiable operations with hand-written vector-Jacobian products."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeMismatch, Tensor, as_tensor, make


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- elementwise and reductions ---------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data + b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data - b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data * b.data, (a, b),
                lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                           _unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return make(out, (a,), back)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis, keepdims), 1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)
    return make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def take(a, index, axis=0):
    """Select entries along ``axis`` by an integer index array."""
    a = as_tensor(a)
    index = np.asarray(index)

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, (slice(None),) * axis + (index,), g)
        return (out,)
    return make(np.take(a.data, index, axis=axis), (a,), back)


def getitem(a, key):
    """Basic (slice/integer) indexing."""
    a = as_tensor(a)

    def back(g):
        out = np.zeros_like(a.data)
        out[key] = g
        return (out,)
    return make(a.data[key], (a,), back)


def matmul(a, b):
    """Batched matrix product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul needs operands with >= 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb
    return make(a.data @ b.data, (a, b), back)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make(out, (a,), lambda g: (g * (1.0 - out ** 2),))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    """log(1 + exp(a)), stable for large |a|."""
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return make(out, (a,), lambda g: (g * _sigmoid(x),))


def log1mexp(a):
    """log(1 - exp(a)) for a < 0, switching formulas at -ln 2 for accuracy."""
    a = as_tensor(a)
    x = a.data
    out = np.where(x > -np.log(2.0), np.log(-np.expm1(np.minimum(x, -1e-300))),
                   np.log1p(-np.exp(np.minimum(x, 0.0))))
    return make(out, (a,), lambda g: (g / -np.expm1(-np.minimum(x, -1e-300)),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return make(a.data * mask, (a,), lambda g: (g * mask,))


def elu(a, alpha: float = 1.0):
    a = as_tensor(a)
    x = a.data
    neg = x <= 0
    em1 = np.expm1(np.minimum(x, 0.0))
    out = np.where(neg, alpha * em1, x)
    return make(out, (a,), lambda g: (g * np.where(neg, alpha * (em1 + 1.0), 1.0),))


def softmax(a, axis: int = -1, mask=None):
    """Softmax along ``axis``; entries where ``mask`` is False get weight 0.

    Every slice must keep at least one unmasked entry.
    """
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)
    return make(out, (a,), back)


def dropout(a, p: float, rng: np.random.Generator | None, training: bool):
    """Inverted dropout; identity when not training or p == 0."""
    a = as_tensor(a)
    if not training or p <= 0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return make(a.data * keep, (a,), lambda g: (g * keep,))


# --- layers ------------------------------------------------------------------

def linear(x, weight, bias=None):
    """y = x W^T + b over the last axis; W has shape (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeMismatch(f"linear expects last dim {weight.shape[1]}, got {x.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads
    return make(out.reshape(*lead, weight.shape[0]), parents, back)


def batch_norm(x, gamma, beta, running_mean, running_var, training: bool,
               momentum: float = 0.1, eps: float = 1e-5):
    """Normalise over every axis except axis 1 (channels).

    In training, batch statistics are used and the running buffers
    (numpy arrays) are updated in place with the unbiased variance.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    if training:
        n = x.data.size // x.shape[1]
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * n / max(n - 1, 1)
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def back(g):
        ggamma = np.sum(g * xhat, axis=axes)
        gbeta = np.sum(g, axis=axes)
        gxhat = g * gamma.data.reshape(bshape)
        if training:
            gx = inv.reshape(bshape) * (gxhat - gxhat.mean(axis=axes).reshape(bshape)
                                        - xhat * np.mean(gxhat * xhat, axis=axes).reshape(bshape))
        else:
            gx = gxhat * inv.reshape(bshape)
        return gx, ggamma, gbeta
    return make(out, (x, gamma, beta), back)


def layer_norm(x, gamma, beta, eps: float = 1e-5):
    """Normalise over the last axis with elementwise affine parameters."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * np.mean(gxhat * xhat, axis=-1, keepdims=True))
        return gx, np.sum(g * xhat, axis=lead), np.sum(g, axis=lead)
    return make(out, (x, gamma, beta), back)


def average_pool(x, kernel: int):
    """Non-overlapping mean pooling along the last axis (remainder dropped)."""
    x = as_tensor(x)
    n_out = x.shape[-1] // kernel
    if n_out < 1:
        raise ShapeMismatch(f"pool kernel {kernel} longer than input {x.shape[-1]}")
    used = n_out * kernel
    out = x.data[..., :used].reshape(*x.shape[:-1], n_out, kernel).mean(axis=-1)

    def back(g):
        gx = np.zeros_like(x.data)
        gx[..., :used] = np.repeat(g / kernel, kernel, axis=-1)
        return (gx,)
    return make(out, (x,), back)


def _pad_last(x, pad):
    if pad == 0:
        return x
    width = [(0, 0)] * (x.ndim - 1) + [(pad, pad)]
    return np.pad(x, width)


def _overlap_add(cols, length_in, pad):
    # cols[..., t, k] contributes to padded position t + k
    n_out, k = cols.shape[-2], cols.shape[-1]
    gp = np.zeros(cols.shape[:-2] + (length_in + 2 * pad,))
    for j in range(k):
        gp[..., j:j + n_out] += cols[..., j]
    return gp[..., pad:pad + length_in] if pad else gp


def conv2d_temporal(x, weight, padding: int):
    """Temporal convolution with a (1, K) kernel per output filter.

    x: (B, H, T) single-plane input; weight: (F, K).
    Returns (B, F, H, T + 2*padding - K + 1) (cross-correlation, as in
    common deep-learning frameworks).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 2:
        raise ShapeMismatch("conv2d_temporal expects x (B,H,T) and weight (F,K)")
    k = weight.shape[1]
    xp = _pad_last(x.data, padding)
    if xp.shape[-1] < k:
        raise ShapeMismatch("input shorter than kernel")
    win = sliding_window_view(xp, k, axis=-1)          # (B, H, T', K)
    out = np.tensordot(win, weight.data, axes=([3], [1])).transpose(0, 3, 1, 2)

    def back(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 1, 2])) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            cols = np.tensordot(g, weight.data, axes=([1], [0]))   # (B, H, T', K)
            gx = _overlap_add(cols, x.shape[-1], padding)
        return gx, gw
    return make(out, (x, weight), back)


def conv2d_depthwise_spatial(x, weight, depth_multiplier: int):
    """Spatial (H, 1) convolution with groups equal to the input filters.

    x: (B, F, H, T); weight: (F*D, H). Output channel f*D + d mixes the
    H rows of input filter f. Returns (B, F*D, T).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    b, f, h, t = x.shape
    d = depth_multiplier
    if weight.shape != (f * d, h):
        raise ShapeMismatch(f"spatial weight {weight.shape} != {(f * d, h)}")
    w3 = weight.data.reshape(f, d, h)
    out = (w3 @ x.data).reshape(b, f * d, t)

    def back(g):
        g4 = g.reshape(b, f, d, t)
        gw = np.einsum("bfdt,bfht->fdh", g4, x.data).reshape(f * d, h) if weight.requires_grad else None
        gx = np.swapaxes(w3, 1, 2) @ g4 if x.requires_grad else None
        return gx, gw
    return make(out, (x, weight), back)


def depthwise_conv1d(x, weight, padding: int):
    """Per-channel temporal convolution. x: (B, C, T); weight: (C, K)."""
    x, weight = as_tensor(x), as_tensor(weight)
    c, k = weight.shape
    if x.ndim != 3 or x.shape[1] != c:
        raise ShapeMismatch(f"depthwise conv expects (B, {c}, T), got {x.shape}")
    xp = _pad_last(x.data, padding)
    n_out = xp.shape[-1] - k + 1
    if n_out < 1:
        raise ShapeMismatch("input shorter than kernel")
    w = weight.data
    out = np.zeros(x.shape[:2] + (n_out,))
    for j in range(k):
        out += w[:, j, None] * xp[..., j:j + n_out]

    def back(g):
        gw = None
        if weight.requires_grad:
            gw = np.stack([np.einsum("bct,bct->c", g, xp[..., j:j + n_out]) for j in range(k)],
                          axis=1)
        gx = None
        if x.requires_grad:
            gp = np.zeros_like(xp)
            for j in range(k):
                gp[..., j:j + n_out] += g * w[:, j, None]
            gx = gp[..., padding:padding + x.shape[-1]] if padding else gp
        return gx, gw
    return make(out, (x, weight), back)


def pointwise_conv(x, weight):
    """1x1 convolution mixing channels. x: (B, C, T); weight: (Cout, C)."""
    return matmul(weight, x)


def separable_conv(x, depthwise_weight, pointwise_weight, padding: int):
    return pointwise_conv(depthwise_conv1d(x, depthwise_weight, padding), pointwise_weight)


def multi_head_self_attention(x, in_weight, in_bias, out_weight, out_bias, n_heads: int,
                              key_mask=None, dropout_p: float = 0.0, rng=None,
                              training: bool = False):
    """Scaled dot-product self-attention over (B, T, d) inputs.

    ``key_mask`` (B, T) marks real (True) vs padded (False) positions;
    padded keys receive zero attention weight.
    """
    x = as_tensor(x)
    bsz, t, d = x.shape
    if d % n_heads:
        raise ShapeMismatch("model dim must be divisible by the number of heads")
    hd = d // n_heads
    qkv = linear(x, in_weight, in_bias)                          # (B, T, 3d)
    qkv = transpose(reshape(qkv, (bsz, t, 3, n_heads, hd)), (2, 0, 3, 1, 4))  # (3,B,h,T,hd)
    q, k, v = getitem(qkv, 0), getitem(qkv, 1), getitem(qkv, 2)
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
    mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[:, None, None, :]
    attn = dropout(softmax(scores, axis=-1, mask=mask), dropout_p, rng, training)
    ctx = reshape(transpose(matmul(attn, v), (0, 2, 1, 3)), (bsz, t, d))
    return linear(ctx, out_weight, out_bias)


# --- losses ------------------------------------------------------------------

def bce_with_logits(logits, targets):
    """Mean binary cross-entropy from logits: softplus(z) - y*z."""
    logits = as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64).reshape(logits.shape)
    z = logits.data
    loss = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))) - y * z
    n = z.size
    return make(loss.mean(), (logits,), lambda g: (g * (_sigmoid(z) - y) / n,))


def bce_from_log_prob(log_p, targets):
    """Mean binary cross-entropy given log P(y=1): -y log p - (1-y) log(1-p)."""
    log_p = as_tensor(log_p)
    y = np.asarray(targets, dtype=np.float64).reshape(log_p.shape)
    per = sub(mul(mul(log_p, -1.0), y), mul(log1mexp(log_p), 1.0 - y))
    return mean(per)
