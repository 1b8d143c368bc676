import json
import warnings

import numpy as np
import pytest

from eegpath.edf_io import read_edf
from eegpath.preprocess import FrameSet, preprocess_recording
from eegpath.synth_data import (CorpusSpec, assignments, generate_corpus, null_spec, strong_spec,
                                reference_spec, spike_wave, synthesize)


def test_spec_invariants():
    with pytest.raises(ValueError):
        CorpusSpec(pathology_fraction=1.0)
    with pytest.raises(ValueError):
        CorpusSpec(duration_range=(200, 400))
    with pytest.raises(ValueError):
        CorpusSpec(n_hospitals=5)


@pytest.mark.parametrize("n,frac", [(600, 0.5), (37, 0.3), (10, 0.15)])
def test_label_balance_within_one_recording(n, frac):
    labels, hospitals, _, durations = assignments(CorpusSpec(n_recordings=n, pathology_fraction=frac))
    assert abs(np.mean(labels == 0) - frac) <= 1 / n
    assert durations.min() >= 300
    assert np.bincount(hospitals).max() - np.bincount(hospitals).min() <= 1


def test_same_seed_gives_byte_identical_files(tmp_path):
    spec = reference_spec(n_recordings=2, seed=5)
    generate_corpus(spec, tmp_path / "a")
    generate_corpus(spec, tmp_path / "b")
    for name in ("rec00000.edf", "rec00001.edf", "manifest.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_files_parse_cleanly_and_survive_preprocessing(tmp_path):
    spec = reference_spec(n_recordings=4, seed=1)
    rows = generate_corpus(spec, tmp_path)
    manifest = [json.loads(l) for l in (tmp_path / "manifest.jsonl").read_text().splitlines()]
    assert manifest == rows
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for row in rows:
            _, raw = read_edf(tmp_path / row["path"])
            assert raw.rate == row["rate"]
            fs = preprocess_recording(raw, row["label"], row["recording_id"])
            assert isinstance(fs, FrameSet) and len(fs) >= 50
    assert CorpusSpec.from_dict(json.loads((tmp_path / "corpus_spec.json").read_text())) == spec


def _delta_ratio(x, rate):
    f = np.fft.rfftfreq(x.shape[-1], 1 / rate)
    p = np.abs(np.fft.rfft(x, axis=-1)) ** 2
    return p[:, (f >= 1) & (f <= 4)].sum() / p[:, (f >= 8) & (f <= 12)].sum()


def test_strong_pathology_separates_frontal_delta_power():
    spec = strong_spec(n_recordings=2)
    normal = [_delta_ratio(synthesize(spec, 1, 0, 300, s)[:7], 250) for s in range(4)]
    path = [_delta_ratio(synthesize(spec, 0, 0, 300, s)[:7], 250) for s in range(4)]
    assert min(path) > 1.8 * max(normal)


def test_reference_pathology_raises_delta_for_the_same_subject():
    # same seed: identical subject draws, only the pathology differs
    spec = reference_spec(n_recordings=2)
    for s in range(4):
        normal = _delta_ratio(synthesize(spec, 1, 0, 300, s)[:7], 250)
        path = _delta_ratio(synthesize(spec, 0, 0, 300, s)[:7], 250)
        assert path >= normal


def test_reference_classes_overlap():
    spec = reference_spec(n_recordings=2)
    normal = [_delta_ratio(synthesize(spec, 1, 0, 300, s)[:7], 250) for s in range(8)]
    path = [_delta_ratio(synthesize(spec, 0, 0, 300, 100 + s)[:7], 250) for s in range(8)]
    assert min(path) < max(normal)


def test_null_spec_classes_are_identically_distributed():
    spec = null_spec(n_recordings=2)
    a = synthesize(spec, 1, 0, 300, 3)
    b = synthesize(spec, 0, 0, 300, 3)
    np.testing.assert_array_equal(a, b)


def test_spike_wave_is_three_hertz():
    x = spike_wave(250, 2.0, 60.0)
    f = np.fft.rfftfreq(len(x), 1 / 250)
    assert abs(f[np.argmax(np.abs(np.fft.rfft(x))[1:]) + 1] - 3.0) < 0.6
    assert np.abs(x).max() <= 60.0 + 1e-9
