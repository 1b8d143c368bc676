import numpy as np
import pytest

from eegpath import classical_models as cm
from eegpath.evaluation import AccessLog, cross_validate_suite, leakage_violations, stratified_folds
from eegpath.meta_model import MetaConfig
from eegpath.neural_models import TrainConfig, load_model
from eegpath.pipeline import (SPEC_NAMES, GbeSpec, MetaSpec, MilSpec, Profile, _Fitted,
                              full_suite, in_memory_dataset, preprocess_corpus,
                              featurize_corpus, load_dataset, save_fitted, spec_by_name,
                              suite_for)
from eegpath.preprocess import FrameSet
from eegpath.synth_data import generate_corpus, strong_spec

TINY_NET = TrainConfig(epochs=1, batch_frames=32, batch_recordings=4, frames_per_recording=4,
                       eval_chunk=64, eval_batch=4)
TINY = Profile(sinet=TINY_NET, mil=TINY_NET, gbt=cm.GbtConfig(iterations=5), gbe_members=2,
               rf=cm.RfConfig(n_trees=3), meta=MetaConfig())


def _framesets(n=24, frames=6, seed=0):
    g = np.random.default_rng(seed)
    out = []
    for i in range(n):
        label = i % 2
        x = g.normal(size=(frames, 19, 600)) * (10.0 + 4.0 * label)
        out.append(FrameSet(f"r{i:03d}", x.astype(np.float32), label,
                            "FM"[(i // 2) % 2], ""))
    return out


@pytest.fixture(scope="module")
def dataset():
    return in_memory_dataset(_framesets(), "tiny", AccessLog())


def test_every_model_kind_never_reads_test_rows(dataset):
    specs = suite_for(SPEC_NAMES, TINY)
    assert [s.name for s in specs] == list(SPEC_NAMES)
    folds = stratified_folds(dataset.manifest, 6, 0)
    reports = cross_validate_suite(specs, dataset, folds, seed=0, steps=[0, 3])
    assert set(reports) == set(SPEC_NAMES)
    assert leakage_violations(dataset.log, folds) == []
    fitted_phases = {p for _, p, _ in dataset.log.entries if p.startswith("fit:")}
    assert fitted_phases == {f"fit:{n}" for n in SPEC_NAMES}
    for rep in reports.values():
        assert all(0.0 <= s.test_auc <= 1.0 for s in rep.steps)


def test_leakage_audit_detects_a_peeking_model():
    log = AccessLog()
    ds = in_memory_dataset(_framesets(), "peek", log)

    class Peeker(GbeSpec):
        name = "peek"

        def fit(self, train, validation, context, seed):
            test_ids = [i for i in ds.ids if i not in set(train.ids) | set(validation.ids)]
            ds.view(test_ids)[0]
            return _Fitted(lambda v: np.full(len(v), 0.5))

    folds = stratified_folds(ds.manifest, 6, 0)
    cross_validate_suite([Peeker()], ds, folds, steps=[1])
    assert len(leakage_violations(log, folds)) == 1


def test_meta_is_fit_on_validation_predictions_only(dataset):
    calls = []

    class Probe:
        def __init__(self, name):
            self.name = name

        def fit(self, train, validation, context, seed):
            def predict(view):
                calls.append((self.name, tuple(view.ids)))
                return np.linspace(0.1, 0.9, len(view))
            return _Fitted(predict)

    specs = [Probe(c) for c in MetaConfig().components] + [MetaSpec()]
    folds = stratified_folds(dataset.manifest, 6, 0)
    cross_validate_suite(specs, dataset, folds, steps=[2])
    _, val_ids, test_ids = folds.step(2)
    seen = {ids for _, ids in calls}
    assert seen == {tuple(val_ids), tuple(test_ids)}
    # each component predicted each view exactly once (cached for META)
    assert len(calls) == 2 * len(MetaConfig().components)


def test_fitted_caches_per_view(dataset):
    n = []
    fitted = _Fitted(lambda v: n.append(1) or np.zeros(len(v)))
    view = dataset.view(dataset.ids[:3])
    fitted.predict(view)
    fitted.predict(dataset.view(dataset.ids[:3]))
    assert len(n) == 1
    fitted.predict(dataset.view(dataset.ids[3:5]))
    assert len(n) == 2


def test_pretrained_variant_requires_sinet_in_context(dataset):
    spec = MilSpec("miNet", True, TINY_NET)
    with pytest.raises(KeyError):
        spec.fit(dataset.view(dataset.ids[:8]), dataset.view(dataset.ids[8:12]), {}, 0)


def test_suite_dependencies_and_names():
    assert [s.name for s in suite_for(["META"], TINY)] == ["siNet", "MINetP", "TransNetP",
                                                           "GBE", "META"]
    assert [s.name for s in suite_for(["miNetN"], TINY)] == ["miNetN"]
    assert [s.name for s in suite_for(["miNetP"], TINY)] == ["siNet", "miNetP"]
    assert [s.name for s in full_suite(TINY)] == ["siNet", "miNetP", "MINetP", "TransNetP",
                                                  "GBE", "RF", "META"]
    with pytest.raises(ValueError):
        spec_by_name("XGBoost")


def test_save_fitted_round_trips_networks_and_forests(dataset, tmp_path):
    folds = stratified_folds(dataset.manifest, 6, 0)
    contexts = {}
    specs = suite_for(["miNetN", "RF"], TINY)
    cross_validate_suite(specs, dataset, folds, steps=[0], contexts=contexts)
    ctx = contexts[0]
    save_fitted("miNetN", ctx["miNetN"], tmp_path)
    save_fitted("RF", ctx["RF"], tmp_path)
    view = dataset.view(folds.step(0)[2])
    net = load_model(tmp_path / "miNetN")
    expected = ctx["miNetN"].predict(view)
    got = net.predict_proba([np.asarray(r.frames) for r in view], 64, 4)
    np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-15)
    forest = cm.load_model(tmp_path / "RF.json")
    assert len(forest.trees) == 3


def test_corpus_preparation_matches_in_memory_path(tmp_path):
    spec = strong_spec(n_recordings=3, seed=2)
    generate_corpus(spec, tmp_path / "corpus")
    rows, excluded = preprocess_corpus(tmp_path / "corpus", tmp_path / "prep")
    assert len(rows) == 3 and excluded == []
    summaries = featurize_corpus(tmp_path / "prep")
    ds = load_dataset(tmp_path / "prep")
    assert ds.ids == sorted(r["recording_id"] for r in rows)
    for s in summaries:
        loaded = ds._payloads[s.recording_id].summary
        np.testing.assert_array_equal(loaded.coherence, s.coherence)
        np.testing.assert_array_equal(loaded.covariance, s.covariance)
