"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numeric_grad(f, arrays, index, h=1e-4):
    """d f / d arrays[index] by central differences; ``f`` maps arrays to a float."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    x = base[index]
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(base)
        flat[i] = old - h
        down = f(base)
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def relative_error(analytic, numeric) -> float:
    """max |a - n| scaled by the larger of the two max-norms (floor 1e-8)."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check(fn, arrays, seed=0, h=1e-4, wrt=None) -> float:
    """Largest relative error between analytic and numeric gradients.

    ``fn`` takes a list of Tensors and returns a Tensor; the scalar probed
    is the sum of the output weighted by a fixed random projection.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    wrt = range(len(arrays)) if wrt is None else wrt
    probe = {}

    def scalar(arrs, track=False):
        ts = [Tensor(a, requires_grad=track) for a in arrs]
        out = fn(ts)
        if "w" not in probe:
            probe["w"] = np.random.default_rng(seed).normal(size=out.shape)
        return ts, out

    ts, out = scalar(arrays, track=True)
    from . import ops
    ops.sum(ops.mul(out, probe["w"])).backward()
    worst = 0.0
    for i in wrt:
        def f(arrs):
            _, o = scalar(arrs)
            return float(np.sum(o.data * probe["w"]))
        num = numeric_grad(f, arrays, i, h)
        ana = ts[i].grad if ts[i].grad is not None else np.zeros_like(arrays[i])
        worst = max(worst, relative_error(ana, num))
    return worst


def check_parameters(forward, params, seed=0, h=1e-4, max_entries=None) -> float:
    """Largest relative error over module parameters.

    ``forward()`` rebuilds the output Tensor from the current parameter
    values; entries are perturbed in place. ``max_entries`` limits the
    number of probed entries per parameter (chosen at random).
    """
    from . import ops

    rng = np.random.default_rng(seed)
    for p in params:
        p.grad = None
    out = forward()
    w = np.random.default_rng(seed + 1).normal(size=out.shape)
    ops.sum(ops.mul(out, w)).backward()
    worst = 0.0
    for p in params:
        ana = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        num = np.zeros(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            up = float(np.sum(forward().data * w))
            flat[i] = old - h
            down = float(np.sum(forward().data * w))
            flat[i] = old
            num[j] = (up - down) / (2 * h)
        scale = max(np.max(np.abs(ana)), np.max(np.abs(num)), 1e-8)
        worst = max(worst, float(np.max(np.abs(ana.reshape(-1)[idx] - num)) / scale))
    return worst
