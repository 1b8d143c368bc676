"""Corpus preparation and cross-validation adapters for every model kind.

A prepared corpus is a directory of frame archives plus recording
summaries (the reference-independent part of the handcrafted features).
Each CV step builds its feature matrices with a tangent-space reference
computed from that step's training recordings only.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import classical_models as cm
from .edf_io import read_edf
from .evaluation.cv import Dataset, ModelSpec
from .features import RecordingSummary, feature_matrix, read_summaries, reference_mean, \
    summarize_recording, write_summaries
from .meta_model import COMPONENTS, MetaConfig, train_meta
from .neural_models import TrainConfig, build_model, model_name, train_mil, train_sinet
from .preprocess import (Excluded, FrameSet, PreprocessConfig, manifest_row,
                         preprocess_recording, read_frame_archive, read_manifest,
                         write_frame_archive, write_manifest)


@dataclass
class Recording:
    """CV payload: frames for the networks, summary for the classical models."""

    frameset: FrameSet
    summary: RecordingSummary

    @property
    def frames(self):
        return self.frameset.frames

    @property
    def label(self):
        return self.frameset.label


# --- corpus preparation --------------------------------------------------------------

def _map(fn, items, workers: int):
    """Ordered map, optionally over a process pool."""
    if workers <= 1:
        return map(fn, items)
    from concurrent.futures import ProcessPoolExecutor
    pool = ProcessPoolExecutor(workers)
    try:
        return list(pool.map(fn, items, chunksize=4))
    finally:
        pool.shutdown()


def _preprocess_entry(args):
    path, entry, config = args
    _, raw = read_edf(path)
    return preprocess_recording(raw, entry["label"], entry["recording_id"],
                                entry.get("sex", ""), entry.get("hospital_id", ""), config)


def preprocess_corpus(corpus_dir, out_dir, config: PreprocessConfig = PreprocessConfig(),
                      progress=None, workers: int = 1):
    """EDF corpus -> frame archives + manifest (excluded recordings listed apart)."""
    corpus_dir, out_dir = Path(corpus_dir), Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    entries = read_manifest(corpus_dir / "manifest.jsonl")
    jobs = [(corpus_dir / e["path"], e, config) for e in entries]
    rows, excluded = [], []
    for i, result in enumerate(_map(_preprocess_entry, jobs, workers)):
        if isinstance(result, Excluded):
            excluded.append(asdict(result))
            continue
        write_frame_archive(out_dir / "frames" / f"{result.recording_id}.frm", result)
        rows.append(manifest_row(result))
        if progress:
            progress(i, result)
    write_manifest(out_dir / "manifest.jsonl", rows)
    (out_dir / "excluded.json").write_text(json.dumps(excluded, indent=2) + "\n")
    return rows, excluded


def _summarize_archive(path):
    return summarize_recording(read_frame_archive(path))


def featurize_corpus(prepared_dir, progress=None, workers: int = 1):
    """Per-recording summaries for every archived FrameSet."""
    prepared_dir = Path(prepared_dir)
    paths = [prepared_dir / "frames" / f"{row['recording_id']}.frm"
             for row in read_manifest(prepared_dir / "manifest.jsonl")]
    summaries = []
    for i, summary in enumerate(_map(_summarize_archive, paths, workers)):
        summaries.append(summary)
        if progress:
            progress(i, summary)
    write_summaries(prepared_dir / "summaries.csv", summaries)
    return summaries


def load_dataset(prepared_dir, dataset_id=None, log=None) -> Dataset:
    prepared_dir = Path(prepared_dir)
    rows = read_manifest(prepared_dir / "manifest.jsonl")
    summaries = {s.recording_id: s for s in read_summaries(prepared_dir / "summaries.csv")}
    payloads = {}
    for row in rows:
        rid = row["recording_id"]
        fs = read_frame_archive(prepared_dir / "frames" / f"{rid}.frm")
        payloads[rid] = Recording(fs, summaries[rid])
    return Dataset(rows, payloads, dataset_id or prepared_dir.name, log)


def in_memory_dataset(framesets, dataset_id="memory", log=None) -> Dataset:
    rows = [manifest_row(fs) for fs in framesets]
    payloads = {fs.recording_id: Recording(fs, summarize_recording(fs)) for fs in framesets}
    return Dataset(rows, payloads, dataset_id, log)


# --- model specs -------------------------------------------------------------------------

@dataclass
class Profile:
    """Training budgets. Defaults are the published settings;
    :func:`desk_profile` shrinks them for single-CPU end-to-end runs."""

    sinet: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=50, batch_frames=4096))
    mil: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=150, batch_recordings=64))
    gbt: cm.GbtConfig = field(default_factory=cm.GbtConfig)
    gbe_members: int = cm.GBE_MEMBERS
    rf: cm.RfConfig = field(default_factory=cm.RfConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self), default=list))


def desk_profile(**overrides) -> Profile:
    """Single-CPU budgets: short schedules with small batches and a higher
    learning rate, 16 frames per recording per MIL step, smaller ensembles."""
    p = Profile(sinet=TrainConfig(epochs=4, lr=3e-3, batch_frames=128),
                mil=TrainConfig(epochs=8, lr=3e-3, batch_recordings=8, frames_per_recording=16),
                gbe_members=5, rf=cm.RfConfig(n_trees=400))
    return replace(p, **overrides)


class _Fitted:
    """Fitted model wrapper with per-view prediction caching."""

    def __init__(self, predict_fn, model=None, selection=None, reference=None):
        self._predict_fn = predict_fn
        self.model = model
        self.selection = selection
        self.reference = reference
        self._cache = {}

    def predict(self, view) -> np.ndarray:
        key = tuple(view.ids)
        if key not in self._cache:
            self._cache[key] = np.asarray(self._predict_fn(view), dtype=np.float64)
        return self._cache[key]


def _summaries(view):
    return [rec.summary for rec in view]


class FeatureModelSpec(ModelSpec):
    """Shared plumbing: feature matrices with a training-only reference."""

    def _design(self, train):
        summaries = _summaries(train)
        ref = reference_mean(summaries)
        return ref, feature_matrix(summaries, ref)


class GbeSpec(FeatureModelSpec):
    name = "GBE"

    def __init__(self, config: cm.GbtConfig = cm.GbtConfig(), n_members: int = cm.GBE_MEMBERS):
        self.config, self.n_members = config, n_members

    def fit(self, train, validation, context, seed):
        ref, X = self._design(train)
        Xv = feature_matrix(_summaries(validation), ref)
        model = cm.train_gbe(X, train.labels, self.config, (Xv, validation.labels), seed,
                             self.n_members)
        sel = int(np.mean([m.n_used for m in model.members]))
        return _Fitted(lambda v: model.predict_proba(feature_matrix(_summaries(v), ref)),
                       model, sel, ref)


class RfSpec(FeatureModelSpec):
    name = "RF"

    def __init__(self, config: cm.RfConfig = cm.RfConfig()):
        self.config = config

    def fit(self, train, validation, context, seed):
        # the validation fold is not used by the forest
        ref, X = self._design(train)
        model = cm.train_rf(X, train.labels, self.config, seed)
        return _Fitted(lambda v: model.predict_proba(feature_matrix(_summaries(v), ref)), model,
                       reference=ref)


def _neural_predict(model, chunk=512, batch=8):
    return lambda view: model.predict_proba([np.asarray(rec.frames) for rec in view], chunk, batch)


class SinetSpec(ModelSpec):
    """siNet; its encoder also serves as the pretrained encoder of P variants."""

    name = "siNet"

    def __init__(self, config: TrainConfig = TrainConfig(epochs=50)):
        self.config = config

    def fit(self, train, validation, context, seed):
        model, hist = train_sinet(list(train), list(validation), self.config, seed)
        context.setdefault("histories", {})[self.name] = hist
        return _Fitted(_neural_predict(model, self.config.eval_chunk, self.config.eval_batch),
                       model, hist.best_epoch)


class MilSpec(ModelSpec):
    def __init__(self, kind: str, pretrained: bool = True,
                 config: TrainConfig = TrainConfig(epochs=150), encoder_from: str = "siNet"):
        self.kind, self.pretrained, self.config = kind, pretrained, config
        self.encoder_from = encoder_from
        self.name = model_name(kind, "P" if pretrained else "N")

    def fit(self, train, validation, context, seed):
        encoder = None
        if self.pretrained:
            if self.encoder_from not in context:
                raise KeyError(f"{self.name} needs a fitted {self.encoder_from} earlier in the suite")
            encoder = context[self.encoder_from].model.encoder
        model = build_model(self.kind, encoder, seed=seed)
        model, hist = train_mil(model, list(train), list(validation), self.config, seed)
        context.setdefault("histories", {})[self.name] = hist
        return _Fitted(_neural_predict(model, self.config.eval_chunk, self.config.eval_batch),
                       model, hist.best_epoch)


class MetaSpec(ModelSpec):
    """Blend fitted components; trained on their validation-fold predictions."""

    name = "META"

    def __init__(self, config: MetaConfig = MetaConfig()):
        self.config = config

    def fit(self, train, validation, context, seed):
        comps = [context[c] for c in self.config.components]
        P = np.column_stack([c.predict(validation) for c in comps])
        model = train_meta(P, validation.labels, self.config)
        return _Fitted(lambda v: model.predict_proba(np.column_stack([c.predict(v) for c in comps])),
                       model)


def full_suite(profile: Profile = Profile(), mil_kinds=("miNet", "MINet", "TransNet")):
    """Specs in dependency order: siNet, P-variant MIL models, GBE, RF, META."""
    specs = [SinetSpec(profile.sinet)]
    specs += [MilSpec(k, True, profile.mil) for k in mil_kinds]
    specs += [GbeSpec(profile.gbt, profile.gbe_members), RfSpec(profile.rf), MetaSpec(profile.meta)]
    return specs


SPEC_NAMES = ("siNet", "miNetP", "MINetP", "TransNetP", "miNetN", "MINetN", "TransNetN",
              "GBE", "RF", "META")


def spec_by_name(name: str, profile: Profile = Profile()):
    if name == "siNet":
        return SinetSpec(profile.sinet)
    if name == "GBE":
        return GbeSpec(profile.gbt, profile.gbe_members)
    if name == "RF":
        return RfSpec(profile.rf)
    if name == "META":
        return MetaSpec(profile.meta)
    for kind in ("miNet", "MINet", "TransNet"):
        for variant in ("P", "N"):
            if name == kind + variant:
                return MilSpec(kind, variant == "P", profile.mil)
    raise ValueError(f"unknown model {name!r}; choose from {SPEC_NAMES}")


def suite_for(names, profile: Profile = Profile()):
    """Specs for ``names`` plus the dependencies they need, in run order."""
    wanted = list(names)
    if "META" in wanted:
        wanted += [c for c in profile.meta.components if c not in wanted]
    if any(n.endswith("P") and n != "META" for n in wanted) and "siNet" not in wanted:
        wanted.append("siNet")
    order = [n for n in SPEC_NAMES if n in wanted]
    return [spec_by_name(n, profile) for n in order]


def save_fitted(name: str, fitted, out_dir) -> list[str]:
    """Persist one fitted suite member; returns the written file names."""
    from .neural_models import save_model as save_network
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = fitted.model
    if name == "META":
        model.save(out / "META.json")
        return ["META.json"]
    if name in ("GBE", "RF"):
        cm.save_model(model, out / f"{name}.json")
        (out / f"{name}.reference.json").write_text(json.dumps(fitted.reference.tolist()))
        return [f"{name}.json", f"{name}.reference.json"]
    save_network(model, out / name, {"selected_epoch": fitted.selection})
    return sorted(p.name for p in out.glob(f"{name}.*"))
