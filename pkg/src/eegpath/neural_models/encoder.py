"""EEGNet frame encoder: 19 x 600 frame -> 288 features.

temporal conv (8 x 64) -> batch-norm -> depthwise spatial conv (19 x 1,
depth 2) -> batch-norm -> ELU -> mean-pool 4 -> dropout -> separable conv
(16 x 16) -> batch-norm -> ELU -> mean-pool 8 -> dropout -> flatten.

Two numerically equivalent front ends are provided. ``forward_plain``
composes the individual layers. The default fused path exploits
linearity: the spatial mixing is applied before the temporal filter, and
the first batch-norm's statistics are obtained exactly from the window
mean and autocorrelation of the input, so the 8 x 19 x 601 intermediate
is never materialised.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..autodiff import ops
from ..autodiff.layers import (BatchNorm, DepthwiseSpatialConv, Dropout, Module,
                               SeparableConv, TemporalConv)
from ..autodiff.tensor import ShapeMismatch, Tensor, as_tensor, make

N_CHANNELS = 19
FRAME_LENGTH = 600


@dataclass(frozen=True)
class EncoderConfig:
    n_channels: int = N_CHANNELS
    frame_length: int = FRAME_LENGTH
    temporal_filters: int = 8
    temporal_kernel: int = 64
    depth_multiplier: int = 2
    pointwise_filters: int = 16
    separable_kernel: int = 16
    pool1: int = 4
    pool2: int = 8
    dropout: float = 0.25
    bn_momentum: float = 0.1
    bn_eps: float = 1e-3

    @property
    def spatial_filters(self) -> int:
        return self.temporal_filters * self.depth_multiplier

    @property
    def encoding_dim(self) -> int:
        t1 = self.frame_length + 2 * (self.temporal_kernel // 2) - self.temporal_kernel + 1
        t2 = t1 // self.pool1
        t3 = t2 + 2 * (self.separable_kernel // 2) - self.separable_kernel + 1
        return self.pointwise_filters * (t3 // self.pool2)

    def to_dict(self) -> dict:
        return asdict(self)


ENCODER_PARAMETERS = 1408
ENCODING_DIM = 288


# --- exact first-stage batch statistics --------------------------------------

def _window_moments(xp, k, n_out):
    """Mean vector m (K,) and second-moment matrix R (K, K) of the length-K
    windows xp[..., t:t+K], t < n_out, pooled over all leading axes."""
    rows = xp.reshape(-1, xp.shape[-1])
    n_rows, tp = rows.shape
    count = n_rows * n_out
    csum = np.concatenate([[0.0], np.cumsum(rows.sum(axis=0))])
    m = (csum[np.arange(k) + n_out] - csum[np.arange(k)]) / count
    if tp < 2 * k or n_out < k:
        win = sliding_window_view(rows, k, axis=-1)[:, :n_out]
        flat = win.reshape(-1, k)
        return m, flat.T @ flat / count

    # full-length lag sums A_d = sum_s x[s] x[s+d] from two block Gram matrices
    nb = -(-tp // k)
    padded = np.zeros((n_rows, (nb + 1) * k))
    padded[:, :tp] = rows
    # consecutive blocks; each row ends in a zero block, so pairs that
    # straddle two rows contribute nothing
    y = padded.reshape(-1, k)
    g0 = y.T @ y
    g1 = y[:-1].T @ y[1:]
    lag = np.array([np.trace(g0, offset=d) + (np.trace(g1, offset=d - k) if d else 0.0)
                    for d in range(k)])

    # partial lag sums near both ends, to trim A_d to each window range
    mh = rows[:, :k - 1].T @ rows[:, :2 * k - 2]          # (K-1, 2K-2)
    s0 = n_out - k + 1
    mt = rows[:, s0:].T @ rows[:, n_out:]                  # (2K-2, K-1)
    head = np.zeros((k, k))     # head[d, s] = P_d[s], s < K-1
    tail = np.zeros((k, k))     # tail[d, j - n_out] = P_d[j - d], j >= n_out
    for d in range(k):
        head[d, :k - 1] = mh[np.arange(k - 1), np.arange(k - 1) + d]
        j = np.arange(k - 1)
        tail[d, :k - 1] = mt[j + n_out - d - s0, j]
    head_c = np.concatenate([np.zeros((k, 1)), np.cumsum(head, axis=1)], axis=1)
    tail_rc = np.concatenate([np.cumsum(tail[:, ::-1], axis=1)[:, ::-1], np.zeros((k, 1))], axis=1)

    kk, ll = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    lo, hi = np.minimum(kk, ll), np.maximum(kk, ll)
    d = hi - lo
    # exclude s < lo (head) and s + d >= hi + n_out (tail)
    r = lag[d] - head_c[d, lo] - tail_rc[d, hi]
    return m, r / count


# --- blocked Toeplitz temporal filtering --------------------------------------

def _toeplitz(w, block):
    k = w.shape[-1]
    i = np.arange(block + k - 1)[:, None] - np.arange(block)[None, :]
    valid = (i >= 0) & (i < k)
    return np.ascontiguousarray(np.where(valid, w[..., np.clip(i, 0, k - 1)], 0.0))  # (..., L+K-1, L)


def _blocks(u, k, n_out):
    """Overlapping input blocks: (..., n_blocks, L + K - 1) with L = K."""
    nb = -(-n_out // k)
    need = nb * k + k - 1
    if u.shape[-1] < need:
        u = np.concatenate([u, np.zeros(u.shape[:-1] + (need - u.shape[-1],))], axis=-1)
    return sliding_window_view(u[..., :need], 2 * k - 1, axis=-1)[..., ::k, :], nb


def fused_front(x, weight, gamma, beta, spatial, running_mean, running_var, training,
                depth_multiplier=2, momentum=0.1, eps=1e-3):
    """Temporal conv -> batch-norm -> depthwise spatial conv, in one op.

    x: (B, H, T) data (no gradient); weight (F, K); gamma, beta (F,);
    spatial (F*D, H). Returns (B, F*D, T') with T' = T + 2*(K//2) - K + 1.
    """
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    weight, gamma, beta, spatial = map(as_tensor, (weight, gamma, beta, spatial))
    b, h, t = x.shape
    f, k = weight.shape
    dm = depth_multiplier
    o = f * dm
    if spatial.shape != (o, h):
        raise ShapeMismatch(f"spatial weight {spatial.shape} != {(o, h)}")
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    tp = xp.shape[-1]
    n_out = tp - k + 1
    w = weight.data
    S = spatial.data

    if training:
        m, r = _window_moments(xp, k, n_out)
        mu = w @ m
        var = np.einsum("fk,kl,fl->f", w, r, w) - mu ** 2
        var = np.maximum(var, 0.0)
        n = b * h * n_out
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * n / max(n - 1, 1)
    else:
        mu, var = running_mean.copy(), running_var.copy()
    inv = 1.0 / np.sqrt(var + eps)
    a = gamma.data * inv                                   # (F,)
    s_sum = S.sum(axis=1)                                  # (O,)
    a_o = np.repeat(a, dm)
    mu_o = np.repeat(mu, dm)
    beta_o = np.repeat(beta.data, dm)

    u = np.matmul(S, xp)                                   # (B, O, Tp)
    ub, nb = _blocks(u, k, n_out)                          # (B, O, nb, 2K-1)
    toe = _toeplitz(w, k)                                  # (F, 2K-1, K)
    # (F, B*D*nb, 2K-1) so each filter is one GEMM against its Toeplitz block
    uf = np.ascontiguousarray(ub.reshape(b, f, dm, nb, 2 * k - 1).transpose(1, 0, 2, 3, 4)
                              ).reshape(f, -1, 2 * k - 1)
    v = np.matmul(uf, toe).reshape(f, b, dm, nb * k).transpose(1, 0, 2, 3)
    v = v.reshape(b, o, nb * k)[..., :n_out]
    out = a_o[None, :, None] * (v - (mu_o * s_sum)[None, :, None]) \
        + (beta_o * s_sum)[None, :, None]

    def back(g):
        gsum_bt = g.sum(axis=(0, 2))                       # (O,)
        g_dot_v = (g * v).sum(axis=(0, 2))
        # d out / d A_f, beta_f, mu_f (direct), s_o
        ga_o = g_dot_v - mu_o * s_sum * gsum_bt
        ga = ga_o.reshape(f, dm).sum(axis=1)
        gbeta = (s_sum * gsum_bt).reshape(f, dm).sum(axis=1)
        gmu = (-a_o * s_sum * gsum_bt).reshape(f, dm).sum(axis=1)
        gs_o = gsum_bt * (beta_o - a_o * mu_o)

        gv = np.zeros((b, o, nb * k))
        gv[..., :n_out] = g * a_o[None, :, None]
        gvf = np.ascontiguousarray(gv.reshape(b, f, dm, nb, k).transpose(1, 0, 2, 3, 4)
                                   ).reshape(f, -1, k)
        # filter gradient: correlate blocks with gv, then sum Toeplitz diagonals
        mblk = np.matmul(uf.transpose(0, 2, 1), gvf)                    # (F, 2K-1, K)
        jj = np.arange(k)
        gw = np.stack([mblk[:, jj + kk, jj].sum(axis=1) for kk in range(k)], axis=1)

        ggamma = ga * inv
        gvar = -0.5 * ga * gamma.data * inv ** 3
        if training:
            gmu = gmu - 2.0 * mu * gvar
            gw = gw + 2.0 * gvar[:, None] * (w @ r) + gmu[:, None] * m[None, :]

        gspatial = None
        if spatial.requires_grad:
            gub = np.matmul(gvf, toe.transpose(0, 2, 1)).reshape(f, b, dm, nb, 2 * k - 1)
            # overlap-add the (2K-1)-long block gradients at stride K
            gu = np.zeros((f, b, dm, nb + 1, k))
            gu[..., :nb, :] += gub[..., :k]
            gu[..., 1:, :k - 1] += gub[..., k:]
            gu = gu.reshape(f, b, dm, (nb + 1) * k)[..., :tp]
            gspatial = np.tensordot(gu, xp, axes=([1, 3], [0, 2])).reshape(o, h) + gs_o[:, None]
        return gw, ggamma, gbeta, gspatial

    return make(out, (weight, gamma, beta, spatial), back)


# --- encoder module ----------------------------------------------------------

class EEGNetEncoder(Module):
    def __init__(self, config: EncoderConfig = EncoderConfig(), seed: int = 0):
        super().__init__()
        c = config
        self.config = c
        rng = np.random.default_rng(seed)
        self.temporal = TemporalConv(c.temporal_filters, c.temporal_kernel,
                                     c.temporal_kernel // 2, rng)
        self.bn1 = BatchNorm(c.temporal_filters, c.bn_momentum, c.bn_eps)
        self.spatial = DepthwiseSpatialConv(c.temporal_filters, c.n_channels,
                                            c.depth_multiplier, rng)
        self.bn2 = BatchNorm(c.spatial_filters, c.bn_momentum, c.bn_eps)
        self.drop1 = Dropout(c.dropout, seed + 101)
        self.separable = SeparableConv(c.spatial_filters, c.pointwise_filters,
                                       c.separable_kernel, c.separable_kernel // 2, rng)
        self.bn3 = BatchNorm(c.pointwise_filters, c.bn_momentum, c.bn_eps)
        self.drop2 = Dropout(c.dropout, seed + 102)

    def _front(self, x, fused):
        if fused:
            return fused_front(x, self.temporal.weight, self.bn1.gamma, self.bn1.beta,
                               self.spatial.weight, self.bn1.buffers["running_mean"],
                               self.bn1.buffers["running_var"], self.training,
                               self.config.depth_multiplier, self.bn1.momentum, self.bn1.eps)
        return self.spatial(self.bn1(self.temporal(x)))

    def forward(self, x, fused: bool = True):
        """x: (B, 19, 600) frames -> (B, 288) encodings."""
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
        c = self.config
        if x.ndim != 3 or x.shape[1:] != (c.n_channels, c.frame_length):
            raise ShapeMismatch(f"expected (B, {c.n_channels}, {c.frame_length}), got {x.shape}")
        z = self._front(x if fused else Tensor(x), fused)
        z = ops.average_pool(ops.elu(self.bn2(z)), c.pool1)
        z = self.drop1(z)
        z = ops.average_pool(ops.elu(self.bn3(self.separable(z))), c.pool2)
        z = self.drop2(z)
        return ops.reshape(z, (x.shape[0], -1))

    def forward_plain(self, x):
        return self.forward(x, fused=False)
