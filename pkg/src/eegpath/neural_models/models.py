"""Frame classifiers and multiple-instance recording classifiers.

All recording-level models expose ``recording_logits(frames, mask)``
returning one logit per recording whose sigmoid is the probability that
the recording is NORMAL (label 1).

* siNet / miNet: encoder + linear classifier per frame; the recording
  probability is the geometric mean of frame probabilities (siNet is
  trained on single frames, miNet end-to-end on whole recordings).
* MINet: encoder + attention pooling + classifier.
* TransNet: encoder + 3 transformer blocks + attention pooling + classifier.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import ops
from ..autodiff.layers import LayerNorm, Linear, Module, TransformerEncoderLayer, glorot_uniform
from ..autodiff.tensor import Parameter, Tensor, make, no_grad
from ..seeding import derive_seed
from .encoder import ENCODING_DIM, EEGNetEncoder, EncoderConfig


class IncompatibleEncoder(ValueError):
    pass


class EmptyRecording(ValueError):
    pass


PARAMETER_COUNTS = {
    "encoder": 1408,
    "classifier": 289,
    "siNet": 1697,
    "miNet": 1697,
    "attention": 166_176,
    "MINet": 167_873,
    "transformer_block": 1_516_640,
    "TransNet": 4_717_793,
}

KINDS = ("siNet", "miNet", "MINet", "TransNet")


class AttentionPool(Module):
    """keys = tanh(K h), score = q . key, weights = softmax, pooled = sum w V h."""

    def __init__(self, dim=ENCODING_DIM, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.key = Linear(dim, dim, bias=False, rng=rng)
        self.value = Linear(dim, dim, bias=False, rng=rng)
        self.query = Parameter(glorot_uniform(rng, (dim,), dim, 1), "query")

    def forward(self, h, mask=None):
        """h: (R, T, d); mask: (R, T) bool. Returns (pooled (R, d), weights (R, T))."""
        keys = ops.tanh(self.key(h))
        r, t, d = h.shape
        scores = ops.reshape(ops.matmul(keys, ops.reshape(self.query, (d, 1))), (r, t))
        weights = ops.softmax(scores, axis=-1, mask=mask)
        values = self.value(h)
        pooled = ops.matmul(ops.reshape(weights, (r, 1, t)), values)
        return ops.reshape(pooled, (r, d)), weights


class TransformerBlock(Module):
    """Standard encoder layer wrapped as LN(x + layer(x))."""

    def __init__(self, dim=ENCODING_DIM, n_heads=8, ff_dim=2048, dropout=0.1, rng=None, seed=0):
        super().__init__()
        self.layer = TransformerEncoderLayer(dim, n_heads, ff_dim, dropout, rng, seed)
        self.norm = LayerNorm(dim)

    def forward(self, x, mask=None):
        return self.norm(ops.add(x, self.layer(x, mask)))


def pad_frames(encodings, lengths):
    """Scatter (N, d) frame encodings into a zero-padded (R, T, d) tensor."""
    lengths = np.asarray(lengths, dtype=int)
    r, t = len(lengths), int(lengths.max())
    d = encodings.shape[1]
    rows = np.repeat(np.arange(r), lengths)
    cols = np.concatenate([np.arange(n) for n in lengths])
    out = np.zeros((r, t, d))
    out[rows, cols] = encodings.data
    mask = np.zeros((r, t), dtype=bool)
    mask[rows, cols] = True
    return make(out, (encodings,), lambda g: (g[rows, cols],)), mask


def segment_mean(values, lengths):
    """Mean of consecutive segments of a (N,) tensor -> (R,)."""
    lengths = np.asarray(lengths, dtype=int)
    m = np.zeros((len(lengths), int(lengths.sum())))
    start = 0
    for i, n in enumerate(lengths):
        m[i, start:start + n] = 1.0 / n
        start += n
    return ops.reshape(ops.matmul(Tensor(m), ops.reshape(values, (-1, 1))), (-1,))


def geometric_mean_logit(frame_logits, lengths):
    """Logit of the geometric mean of frame probabilities, per recording."""
    log_p = ops.mul(ops.softplus(ops.mul(frame_logits, -1.0)), -1.0)   # log sigmoid
    mean_log_p = segment_mean(log_p, lengths)
    return ops.sub(mean_log_p, ops.log1mexp(mean_log_p))


class RecordingModel(Module):
    kind = "base"

    def __init__(self, encoder_config: EncoderConfig = EncoderConfig(), seed: int = 0,
                 variant: str = "N"):
        super().__init__()
        self.seed = seed
        self.variant = variant
        self.encoder = EEGNetEncoder(encoder_config, derive_seed(seed, "encoder"))

    def encode(self, frames, chunk: int | None = None):
        """(N, 19, 600) -> (N, 288). In eval mode frames are encoded in chunks."""
        frames = np.asarray(frames, dtype=np.float64)
        if chunk is None or self.training or len(frames) <= chunk:
            return self.encoder(frames)
        parts = [self.encoder(frames[i:i + chunk]).data for i in range(0, len(frames), chunk)]
        return Tensor(np.concatenate(parts))

    def recording_logits(self, frames, lengths, chunk=None):
        raise NotImplementedError

    def predict_proba(self, recordings, chunk=512, batch=8):
        """Normality probability per recording from ALL its frames."""
        was = self.training
        self.eval()
        out = []
        with no_grad():
            for i in range(0, len(recordings), batch):
                group = recordings[i:i + batch]
                if any(len(g) == 0 for g in group):
                    raise EmptyRecording("a recording has no frames")
                lengths = [len(g) for g in group]
                logits = self.recording_logits(np.concatenate(group), lengths, chunk)
                out.append(1.0 / (1.0 + np.exp(-logits.data)))
        self.train(was)
        return np.concatenate(out)

    def descriptor(self) -> dict:
        return {"kind": self.kind, "variant": self.variant, "seed": self.seed,
                "encoder": self.encoder.config.to_dict()}


class FrameClassifierModel(RecordingModel):
    """Encoder + 288 -> 1 classifier; geometric-mean aggregation."""

    def __init__(self, encoder_config=EncoderConfig(), seed=0, variant="N"):
        super().__init__(encoder_config, seed, variant)
        self.classifier = Linear(ENCODING_DIM, 1, rng=np.random.default_rng(derive_seed(seed, "cls")))

    def frame_logits(self, frames, chunk=None):
        return ops.reshape(self.classifier(self.encode(frames, chunk)), (-1,))

    def recording_logits(self, frames, lengths, chunk=None):
        return geometric_mean_logit(self.frame_logits(frames, chunk), lengths)


class SiNet(FrameClassifierModel):
    kind = "siNet"


class MiNet(FrameClassifierModel):
    kind = "miNet"


class MINet(RecordingModel):
    kind = "MINet"

    def __init__(self, encoder_config=EncoderConfig(), seed=0, variant="N"):
        super().__init__(encoder_config, seed, variant)
        rng = np.random.default_rng(derive_seed(seed, "head"))
        self.attention = AttentionPool(ENCODING_DIM, rng)
        self.classifier = Linear(ENCODING_DIM, 1, rng=rng)

    def _sequence(self, h, mask):
        return h

    def recording_logits(self, frames, lengths, chunk=None):
        h, mask = pad_frames(self.encode(frames, chunk), lengths)
        h = self._sequence(h, mask)
        pooled, _ = self.attention(h, mask)
        return ops.reshape(self.classifier(pooled), (-1,))

    def attention_weights(self, frames):
        """Attention weights over the frames of one recording."""
        with no_grad():
            h, mask = pad_frames(self.encode(frames), [len(frames)])
            return self.attention(self._sequence(h, mask), mask)[1].data[0]


class TransNet(MINet):
    kind = "TransNet"

    def __init__(self, encoder_config=EncoderConfig(), seed=0, variant="N", n_blocks=3,
                 n_heads=8, ff_dim=2048, dropout=0.1, positional_encoding=False):
        super().__init__(encoder_config, seed, variant)
        self.positional_encoding = positional_encoding
        rng = np.random.default_rng(derive_seed(seed, "blocks"))
        self.blocks = [TransformerBlock(ENCODING_DIM, n_heads, ff_dim, dropout, rng,
                                        derive_seed(seed, "block", i) % (1 << 31))
                       for i in range(n_blocks)]

    def _sequence(self, h, mask):
        if self.positional_encoding:
            h = ops.add(h, sinusoidal_positions(h.shape[1], h.shape[2]))
        for block in self.blocks:
            h = block(h, mask)
        return h


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Fixed sine/cosine position table (off by default: frames form a set)."""
    pos = np.arange(length)[:, None]
    rate = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(pos * rate)
    table[:, 1::2] = np.cos(pos * rate)
    return table


_CLASSES = {"siNet": SiNet, "miNet": MiNet, "MINet": MINet, "TransNet": TransNet}


def count_parameters(model: RecordingModel) -> dict:
    counts = {"encoder": model.encoder.n_parameters(), "total": model.n_parameters()}
    if hasattr(model, "attention"):
        counts["attention"] = model.attention.n_parameters()
    counts["classifier"] = model.classifier.n_parameters()
    if isinstance(model, TransNet):
        counts["transformer_block"] = model.blocks[0].n_parameters()
    return counts


def _assert_counts(model):
    if model.encoder.config != EncoderConfig():
        return
    counts = count_parameters(model)
    expected = {"encoder": PARAMETER_COUNTS["encoder"],
                "classifier": PARAMETER_COUNTS["classifier"],
                "total": PARAMETER_COUNTS[model.kind]}
    if "attention" in counts:
        expected["attention"] = PARAMETER_COUNTS["attention"]
    if "transformer_block" in counts and len(model.blocks) == 3 \
            and model.blocks[0].layer.ff1.weight.shape[0] == 2048:
        expected["transformer_block"] = PARAMETER_COUNTS["transformer_block"]
    elif isinstance(model, TransNet):
        expected.pop("total")
    for key, value in expected.items():
        if counts[key] != value:
            raise AssertionError(f"{model.kind} {key}: {counts[key]} parameters, expected {value}")


def build_model(kind: str, pretrained_encoder: EEGNetEncoder | None = None, seed: int = 0,
                encoder_config: EncoderConfig = EncoderConfig(), **kwargs) -> RecordingModel:
    """Construct a model; with ``pretrained_encoder`` the P variant is built
    by copying the encoder's weights and batch-norm statistics exactly."""
    if kind not in _CLASSES:
        raise ValueError(f"unknown model kind {kind!r}; choose from {KINDS}")
    variant = "N" if pretrained_encoder is None else "P"
    model = _CLASSES[kind](encoder_config, seed, variant, **kwargs)
    if pretrained_encoder is not None:
        if pretrained_encoder.config != model.encoder.config:
            raise IncompatibleEncoder("pretrained encoder configuration differs")
        model.encoder.load_state_dict(pretrained_encoder.state_dict())
    _assert_counts(model)
    return model


def model_name(kind: str, variant: str) -> str:
    return kind if kind == "siNet" else kind + variant
