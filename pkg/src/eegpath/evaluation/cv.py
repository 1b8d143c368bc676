"""Stratified k-fold cross-validation with a rotating validation fold.

Datasets hand out rows only through :class:`DataView` objects, and every
row access is written to an :class:`AccessLog`; this makes the
"no test row seen during training or model selection" property auditable.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..seeding import derive_seed, rng as make_rng
from .metrics import acc, auc

N_FOLDS = 6


# --- fold assignment ---------------------------------------------------------

@dataclass(frozen=True)
class FoldAssignment:
    folds: dict
    k: int = N_FOLDS
    seed: int = 0

    def members(self, fold: int) -> list:
        return sorted(i for i, f in self.folds.items() if f == fold)

    def sizes(self) -> list[int]:
        counts = np.bincount(list(self.folds.values()), minlength=self.k)
        return counts.tolist()

    def step(self, i: int):
        """(train ids, validation ids, test ids) for CV step ``i``."""
        test = i % self.k
        val = (i + 1) % self.k
        train = [r for r, f in sorted(self.folds.items()) if f not in (test, val)]
        return train, self.members(val), self.members(test)


def _stratum(row) -> tuple:
    return (int(row["label"]), str(row.get("sex", "")), str(row.get("hospital_id", "") or ""))


def stratified_folds(manifest, k: int = N_FOLDS, seed: int = 0) -> FoldAssignment:
    """Deal recordings into ``k`` folds, stratified by (label, sex, hospital).

    Within each stratum the ids are shuffled by ``seed`` and dealt
    round-robin; the dealing position carries over from one stratum to the
    next so overall fold sizes also differ by at most one.
    """
    strata = defaultdict(list)
    for row in manifest:
        strata[_stratum(row)].append(str(row["recording_id"]))
    folds = {}
    position = 0
    for key in sorted(strata):
        ids = sorted(strata[key])
        order = make_rng(seed, "folds", *key).permutation(len(ids))
        for j in order:
            folds[ids[j]] = position % k
            position += 1
    return FoldAssignment(folds, k, seed)


# --- instrumented data access ------------------------------------------------

@dataclass
class AccessLog:
    entries: list = field(default_factory=list)
    step: int | None = None
    phase: str = ""

    def record(self, recording_id):
        self.entries.append((self.step, self.phase, recording_id))


class Dataset:
    """Recordings keyed by id, each with a manifest row and a payload.

    The payload is whatever the models consume (FrameSet, summary, ...).
    """

    def __init__(self, rows, payloads: dict, dataset_id: str = "dataset",
                 log: AccessLog | None = None):
        self.rows = {str(r["recording_id"]): dict(r) for r in rows}
        self._payloads = payloads
        self.dataset_id = dataset_id
        self.log = log if log is not None else AccessLog()

    @property
    def ids(self) -> list:
        return sorted(self.rows)

    @property
    def manifest(self) -> list:
        return [self.rows[i] for i in self.ids]

    def view(self, ids) -> "DataView":
        return DataView(self, list(ids))

    def _fetch(self, recording_id):
        self.log.record(recording_id)
        return self._payloads[recording_id]


class DataView:
    """A read-only subset of a Dataset; every payload access is logged."""

    def __init__(self, dataset: Dataset, ids):
        self._dataset = dataset
        self.ids = list(ids)
        self.labels = np.array([int(dataset.rows[i]["label"]) for i in self.ids])

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, index):
        return self._dataset._fetch(self.ids[index])

    def __iter__(self):
        for i in range(len(self.ids)):
            yield self[i]

    def row(self, index) -> dict:
        return dict(self._dataset.rows[self.ids[index]])


# --- model protocol and reports ---------------------------------------------

class ModelSpec:
    """Interface for anything cross-validated.

    ``fit`` receives the training and validation views plus a per-step
    ``context`` dict shared between specs of one suite (so dependent
    models can reuse fitted components). It returns an object with
    ``predict(view) -> probabilities`` and an optional ``selection``
    attribute (chosen epoch or tree count).
    """

    name = "model"

    def fit(self, train: DataView, validation: DataView, context: dict, seed: int):
        raise NotImplementedError


@dataclass
class StepResult:
    step: int
    test_auc: float
    test_acc: float
    selection: int | None = None
    test_ids: list = field(default_factory=list)
    test_scores: list = field(default_factory=list)


@dataclass
class CvReport:
    model_id: str
    dataset_id: str
    steps: list

    def _values(self, key):
        return np.array([getattr(s, key) for s in self.steps], dtype=np.float64)

    def mean(self, key="test_auc") -> float:
        return float(self._values(key).mean())

    def sd(self, key="test_auc") -> float:
        v = self._values(key)
        return float(v.std(ddof=1)) if len(v) > 1 else 0.0

    def se(self, key="test_auc") -> float:
        return self.sd(key) / np.sqrt(len(self.steps))

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id, "dataset_id": self.dataset_id,
            "steps": [vars(s) for s in self.steps],
            "auc": {"mean": self.mean(), "sd": self.sd(), "se": self.se()},
            "acc": {"mean": self.mean("test_acc"), "sd": self.sd("test_acc"),
                    "se": self.se("test_acc")},
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, d) -> "CvReport":
        return cls(d["model_id"], d["dataset_id"], [StepResult(**s) for s in d["steps"]])

    @classmethod
    def read(cls, path) -> "CvReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _score(probs, labels):
    probs = np.asarray(probs, dtype=np.float64)
    try:
        a = auc(probs, labels)
    except ValueError:
        a = float("nan")
    return a, acc(probs, labels)


def cross_validate_suite(specs, dataset: Dataset, folds: FoldAssignment, seed: int = 0,
                         steps=None, contexts: dict | None = None) -> dict:
    """Cross-validate several model specs that share per-step context.

    Specs run in the given order within each step, so a spec can depend
    on components fitted earlier in the same step (``context[name]``).
    Returns ``{spec.name: CvReport}``; if ``contexts`` is a dict, each
    step's context (the fitted models) is stored in it by step index.
    """
    log = dataset.log
    results = {s.name: [] for s in specs}
    for i in (range(folds.k) if steps is None else steps):
        train_ids, val_ids, test_ids = folds.step(i)
        train, val, test = dataset.view(train_ids), dataset.view(val_ids), dataset.view(test_ids)
        context = {"step": i}
        for spec in specs:
            log.step, log.phase = i, f"fit:{spec.name}"
            fitted = spec.fit(train, val, context, derive_seed(seed, "cv", i, spec.name))
            context[spec.name] = fitted
            log.phase = f"test:{spec.name}"
            probs = np.asarray(fitted.predict(test), dtype=np.float64)
            a, c = _score(probs, test.labels)
            results[spec.name].append(StepResult(
                i, a, c, getattr(fitted, "selection", None), list(test_ids),
                [float(p) for p in probs]))
        if contexts is not None:
            contexts[i] = context
        log.step, log.phase = None, ""
    return {name: CvReport(name, dataset.dataset_id, steps)
            for name, steps in results.items()}


def cross_validate(spec, dataset: Dataset, folds: FoldAssignment, seed: int = 0) -> CvReport:
    return cross_validate_suite([spec], dataset, folds, seed)[spec.name]


def leakage_violations(log: AccessLog, folds: FoldAssignment) -> list:
    """Log entries where a test-fold row was read while fitting or selecting."""
    bad = []
    for step, phase, rid in log.entries:
        if step is None or not phase.startswith("fit:"):
            continue
        if folds.folds.get(rid) == step % folds.k:
            bad.append((step, phase, rid))
    return bad
