"""Training loops: single-frame (siNet / encoder pretraining) and
multiple-instance (miNet, MINet, TransNet).

Both minimise binary cross-entropy with RAdam and return the parameters
of the epoch with the best validation AUC; validation always uses all
frames of each recording.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import checkpoint, ops
from ..autodiff.optim import RAdam
from ..evaluation.metrics import auc
from ..seeding import derive_seed
from .encoder import EncoderConfig
from .models import RecordingModel, SiNet, build_model


class NoValidationFold(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-3
    batch_frames: int = 4096
    batch_recordings: int = 64
    frames_per_recording: int = 64
    eval_chunk: int = 512
    eval_batch: int = 8


SINET_CONFIG = TrainConfig(epochs=50)
MIL_CONFIG = TrainConfig(epochs=150)


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    train_auc: list = field(default_factory=list)
    val_auc: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_val_auc(self) -> float:
        return self.val_auc[self.best_epoch] if self.best_epoch >= 0 else float("nan")


def _frames_and_labels(recordings):
    frames = [np.asarray(r.frames) for r in recordings]
    labels = np.array([int(r.label) for r in recordings])
    return frames, labels


def _safe_auc(scores, labels):
    try:
        return auc(scores, labels)
    except ValueError:
        return float("nan")


def validation_auc(model: RecordingModel, recordings, config: TrainConfig) -> float:
    frames, labels = _frames_and_labels(recordings)
    probs = model.predict_proba(frames, config.eval_chunk, config.eval_batch)
    return _safe_auc(probs, labels)


def _select(model, history, val_score, epoch, best):
    history.val_auc.append(val_score)
    if best["state"] is None or (np.isfinite(val_score) and val_score > best["score"]):
        best.update(score=val_score, state=model.state_dict())
        history.best_epoch = epoch


def train_sinet(train, validation, config: TrainConfig = SINET_CONFIG, seed: int = 0,
                model: SiNet | None = None, encoder_config: EncoderConfig = EncoderConfig(),
                progress=None):
    """Train encoder + classifier on single frames labelled by their recording.

    Returns (model, history) with the best-validation-AUC parameters loaded.
    """
    if not validation:
        raise NoValidationFold("siNet training needs a validation fold")
    model = model or build_model("siNet", seed=seed, encoder_config=encoder_config)
    frames, labels = _frames_and_labels(train)
    index = np.concatenate([np.stack([np.full(len(f), i), np.arange(len(f))], axis=1)
                            for i, f in enumerate(frames)])
    rng = np.random.default_rng(derive_seed(seed, "sinet-batches"))
    opt = RAdam(model.parameters(), lr=config.lr)
    history = History()
    best = {"score": -np.inf, "state": None}
    for epoch in range(config.epochs):
        model.train()
        order = rng.permutation(len(index))
        losses, scores, targets = [], [], []
        for start in range(0, len(order), config.batch_frames):
            sel = index[order[start:start + config.batch_frames]]
            x = np.stack([frames[i][j] for i, j in sel]).astype(np.float64)
            y = labels[sel[:, 0]]
            opt.zero_grad()
            logits = model.frame_logits(x)
            loss = ops.bce_with_logits(logits, y)
            loss.backward()
            opt.step()
            losses.append(loss.item() * len(sel))
            scores.append(logits.data.copy())
            targets.append(y)
        history.train_loss.append(float(np.sum(losses) / len(index)))
        history.train_auc.append(_safe_auc(np.concatenate(scores), np.concatenate(targets)))
        _select(model, history, validation_auc(model, validation, config), epoch, best)
        if progress:
            progress(epoch, history)
    model.load_state_dict(best["state"])
    model.eval()
    return model, history


def sample_frames(frames, k, rng):
    """min(k, n) frames drawn without replacement, in recording order."""
    n = len(frames)
    if n <= k:
        return frames
    return frames[np.sort(rng.choice(n, k, replace=False))]


def train_mil(model: RecordingModel, train, validation, config: TrainConfig = MIL_CONFIG,
              seed: int = 0, progress=None):
    """Train on whole recordings: one loss per recording, ``frames_per_recording``
    frames sampled per recording per step. Training AUC is computed from
    those sampled frames; validation uses all frames."""
    if not validation:
        raise NoValidationFold("MIL training needs a validation fold")
    frames, labels = _frames_and_labels(train)
    rng = np.random.default_rng(derive_seed(seed, "mil-batches"))
    opt = RAdam(model.parameters(), lr=config.lr)
    history = History()
    best = {"score": -np.inf, "state": None}
    for epoch in range(config.epochs):
        model.train()
        order = rng.permutation(len(frames))
        losses, scores, targets = [], [], []
        for start in range(0, len(order), config.batch_recordings):
            batch = order[start:start + config.batch_recordings]
            picked = [sample_frames(frames[i], config.frames_per_recording, rng) for i in batch]
            x = np.concatenate(picked).astype(np.float64)
            y = labels[batch]
            opt.zero_grad()
            logits = model.recording_logits(x, [len(p) for p in picked])
            loss = ops.bce_with_logits(logits, y)
            loss.backward()
            opt.step()
            losses.append(loss.item() * len(batch))
            scores.append(logits.data.copy())
            targets.append(y)
        history.train_loss.append(float(np.sum(losses) / len(frames)))
        history.train_auc.append(_safe_auc(np.concatenate(scores), np.concatenate(targets)))
        _select(model, history, validation_auc(model, validation, config), epoch, best)
        if progress:
            progress(epoch, history)
    model.load_state_dict(best["state"])
    model.eval()
    return model, history


def sinet_predict(model: RecordingModel, frames) -> float:
    """Geometric mean of frame normality probabilities for one recording."""
    return float(model.predict_proba([np.asarray(frames)])[0])


# --- persistence -------------------------------------------------------------

def save_model(model: RecordingModel, stem, manifest: dict | None = None):
    """Write the checkpoint pair plus ``<stem>.manifest.json``."""
    import json
    desc = model.descriptor()
    if hasattr(model, "blocks"):
        layer = model.blocks[0].layer
        desc["options"] = {"n_blocks": len(model.blocks), "n_heads": layer.attn.n_heads,
                           "ff_dim": layer.ff1.weight.shape[0], "dropout": layer.drop_ff.p,
                           "positional_encoding": model.positional_encoding}
    paths = checkpoint.save(stem, model.state_dict(), desc)
    info = {**{k: desc[k] for k in ("kind", "variant", "seed")}, **(manifest or {})}
    Path(str(stem) + ".manifest.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return paths


def load_model(stem) -> RecordingModel:
    arrays, desc = checkpoint.load(stem)
    cfg = EncoderConfig(**desc["encoder"])
    model = build_model(desc["kind"], seed=desc["seed"], encoder_config=cfg,
                        **desc.get("options", {}))
    model.variant = desc["variant"]
    model.load_state_dict(arrays)
    model.eval()
    return model


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
