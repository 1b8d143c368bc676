import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eegpath import edf_io
from eegpath.edf_io import CHANNELS, parse_edf, write_edf


def _signals(n_channels=19, seconds=30, rate=200, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(0, 40, size=(n_channels, seconds * rate))


def test_calibration_endpoint_maps_digital_max_to_physical_max():
    data = np.zeros((19, 200))
    data[:, 0] = 500.0
    data[:, 1] = -500.0
    buf = write_edf(data, 200, physical_range=(-500, 500))
    header, rec = parse_edf(buf)
    assert header.signals[0].digital_max == 32767
    assert rec.data[0, 0] == 500.0
    assert rec.data[0, 1] == -500.0


def test_unknown_record_count_resolved_from_file_size():
    buf = bytearray(write_edf(_signals(seconds=30), 200))
    buf[236:244] = b"-1      "
    header, rec = parse_edf(bytes(buf))
    header_size = 256 + 256 * 19
    record_size = 2 * 19 * 200
    assert header.n_records == (len(buf) - header_size) // record_size == 30
    assert rec.data.shape == (19, 6000)


def test_extra_channels_dropped_and_order_canonical():
    labels = ["EEG " + c.upper() + "-REF" for c in CHANNELS]
    labels = labels[::-1] + ["ECG", "Photic"]
    data = np.vstack([np.full((1, 200), i, dtype=float) for i in range(21)])
    header, rec = parse_edf(write_edf(data, 200, labels=labels, physical_range=(-100, 100)))
    assert header.n_signals == 21
    assert rec.labels == CHANNELS
    # Fp1 was written last among the EEG channels (reversed order)
    np.testing.assert_allclose(rec.data[:, 0], np.arange(18, -1, -1), atol=0.01)


def test_modern_aliases_mapped():
    labels = [{"T3": "T7", "T4": "T8", "T5": "P7", "T6": "P8"}.get(c, c) for c in CHANNELS]
    _, rec = parse_edf(write_edf(_signals(seconds=2), 200, labels=labels))
    assert rec.labels == CHANNELS


def test_annotation_channel_skipped():
    labels = list(CHANNELS) + ["EDF Annotations"]
    _, rec = parse_edf(write_edf(_signals(20, seconds=2), 200, labels=labels))
    assert len(rec.labels) == 19


def test_missing_channels():
    with pytest.raises(edf_io.MissingChannels):
        parse_edf(write_edf(_signals(18, seconds=2), 200, labels=CHANNELS[:18]))


def test_inconsistent_rate():
    buf = bytearray(write_edf(_signals(seconds=2), 200))
    ns = 19
    offset = 256 + ns * (16 + 80 + 8 + 8 + 8 + 8 + 8 + 80)
    buf[offset:offset + 8] = b"250     "
    with pytest.raises(edf_io.InconsistentRate):
        parse_edf(bytes(buf))


def test_non_ascii_header_is_malformed():
    buf = bytearray(write_edf(_signals(seconds=2), 200))
    buf[10] = 0xC3
    with pytest.raises(edf_io.MalformedHeader):
        parse_edf(bytes(buf))


def test_bad_header_length_is_malformed():
    buf = bytearray(write_edf(_signals(seconds=2), 200))
    buf[184:192] = b"999     "
    with pytest.raises(edf_io.MalformedHeader):
        parse_edf(bytes(buf))


def test_header_length_invariant():
    header, _ = parse_edf(write_edf(_signals(seconds=2), 200))
    assert header.header_bytes == 256 + 256 * header.n_signals


def test_writer_is_deterministic():
    data = _signals(seconds=3)
    assert write_edf(data, 200) == write_edf(data.copy(), 200)


def test_samples_are_little_endian_int16():
    data = np.zeros((19, 200))
    data[0, 0] = 100.0
    buf = write_edf(data, 200, physical_range=(-100, 100))
    first = buf[256 + 256 * 19: 256 + 256 * 19 + 2]
    assert first == (32767).to_bytes(2, "little", signed=True)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(1.0, 2000.0),
       rate=st.sampled_from([200, 250, 256, 500]))
def test_round_trip_within_one_quantum(seed, scale, rate):
    rng = np.random.default_rng(seed)
    data = rng.normal(0, scale, size=(19, 2 * rate))
    header, rec = parse_edf(write_edf(data, rate))
    quantum = np.array([s.gain for s in header.signals])[:, None]
    assert np.all(np.abs(rec.data - data) <= quantum)
    assert rec.rate == rate


def test_calibration_is_monotone():
    sig = edf_io.SignalHeader("Fp1", -200.0, 300.0, -2048, 2047, 1)
    digital = np.arange(-2048, 2048)
    phys = sig.calibrate(digital)
    assert phys[0] == -200.0 and phys[-1] == 300.0
    assert np.all(np.diff(phys) > 0)


@pytest.mark.parametrize("label,expected", [
    ("EEG FP1-REF", "Fp1"), ("EEG FP1-LE", "Fp1"), ("fz", "Fz"), ("EEG T8-REF", "T4"),
    ("P7", "T5"), ("EEG A1-REF", None), ("ECG", None), ("PHOTIC", None),
])
def test_canonical_label(label, expected):
    assert edf_io.canonical_label(label) == expected


def test_writer_rejects_non_finite_signals():
    data = _signals(seconds=1)
    data[3, 7] = np.nan
    with pytest.raises(ValueError):
        write_edf(data, 200)
