import numpy as np
import pytest
from scipy import signal as sps

from eegpath import preprocess as pp
from eegpath.edf_io import CHANNELS, RawRecording, parse_edf, write_edf
from eegpath.preprocess import FilterSpec, PreprocessConfig


def _tone(freq, rate, seconds=20, amp=1.0):
    t = np.arange(int(seconds * rate)) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def _dft_amplitude(x, freq, rate):
    """Amplitude of the DFT bin at ``freq`` (x spans whole periods)."""
    spec = np.fft.rfft(x) / (len(x) / 2)
    k = int(round(freq * len(x) / rate))
    return np.abs(spec[k])


def _steady(y, rate, skip_seconds=5):
    return y[int(skip_seconds * rate):]


def test_notch_suppresses_mains_by_30db():
    rate = 200
    y = pp.notch(_tone(50, rate), 50, 5, rate)
    before = _dft_amplitude(_steady(_tone(50, rate), rate), 50, rate)
    after = _dft_amplitude(_steady(y, rate), 50, rate)
    assert 20 * np.log10(after / before) <= -30


def test_notch_leaves_alpha_within_1db():
    rate = 200
    x = _tone(10, rate)
    y = pp.notch(x, 50, 5, rate)
    ratio = _dft_amplitude(_steady(y, rate), 10, rate) / _dft_amplitude(_steady(x, rate), 10, rate)
    assert abs(20 * np.log10(ratio)) < 1


def test_notch_unit_dc_gain():
    x = np.full(2000, 3.5)
    np.testing.assert_allclose(pp.notch(x, 50, 5, 200, zero_phase=True), x, rtol=1e-9)
    b, a = sps.iirnotch(50, 5, fs=200)
    assert np.isclose(b.sum() / a.sum(), 1.0)


def test_notch_above_nyquist():
    with pytest.raises(pp.FreqAboveNyquist):
        pp.notch(np.zeros(100), 60, 5, 100)


@pytest.mark.parametrize("rate", [200, 250, 256, 500])
def test_lowpass_mask(rate):
    sos, order = pp.design_butterworth(pp.LOWPASS, rate)
    ripple, atten = pp.mask_deviation(sos, pp.LOWPASS, rate)
    assert atten >= 20 and ripple < 1
    # the next lower order must fail, i.e. the order is minimal
    if order > 1:
        lower = sps.butter(order - 1, 40, fs=rate, output="sos")
        assert pp.mask_deviation(lower, pp.LOWPASS, rate)[1] < 20


def test_lowpass_55hz_attenuation_measured_on_signal():
    rate = 200
    x = _tone(55, rate)
    y = pp.butterworth(x, pp.LOWPASS, rate)
    ratio = _dft_amplitude(_steady(y, rate), 55, rate) / _dft_amplitude(_steady(x, rate), 55, rate)
    assert 20 * np.log10(ratio) <= -20


def test_highpass_passband_at_1hz():
    rate = 200
    sos, _ = pp.design_butterworth(pp.HIGHPASS, rate)
    _, h = sps.sosfreqz(sos, worN=[1.0], fs=rate)
    assert abs(20 * np.log10(abs(h[0]))) < 1


def test_fixed_order_that_misses_mask_is_infeasible():
    spec = FilterSpec("lowpass", cutoff=40, order=6, pass_edge=35, stop_edge=50)
    with pytest.raises(pp.SpecInfeasible):
        pp.design_butterworth(spec, 200)


def test_filters_stable_impulse_response():
    rate = 250
    imp = np.zeros(20 * rate)
    imp[0] = 1.0
    for spec in (pp.HIGHPASS, pp.LOWPASS):
        h = pp.butterworth(imp, spec, rate)
        assert np.all(np.isfinite(h))
        assert np.sum(h[-rate:] ** 2) < 1e-3 * np.sum(h ** 2)


def test_resample_length_and_identity():
    x = np.random.default_rng(0).normal(size=(19, 1200))
    assert pp.resample(x, 200, 100).shape == (19, 600)
    np.testing.assert_array_equal(pp.resample(x, 100, 100), x)
    assert pp.resample(np.zeros(1001), 256, 100).shape == (391,)


def test_resample_preserves_5hz_sinusoid():
    rate = 500
    t = np.arange(20 * rate) / rate
    y = pp.resample(np.sin(2 * np.pi * 5 * t), rate, 100)
    t2 = np.arange(len(y)) / 100
    inner = slice(200, len(y) - 200)
    design = np.column_stack([np.sin(2 * np.pi * 5 * t2), np.cos(2 * np.pi * 5 * t2)])[inner]
    coef, *_ = np.linalg.lstsq(design, y[inner], rcond=None)
    assert abs(np.hypot(*coef) - 1.0) < 0.01


def test_resample_rejects_nonpositive():
    with pytest.raises(pp.UnsupportedRate):
        pp.resample(np.zeros(10), 0, 100)


def test_common_average_reference():
    x = np.tile(np.arange(5.0), (19, 1))
    np.testing.assert_array_equal(pp.common_average_reference(x), 0)
    x = np.zeros((19, 1))
    x[3] = 19
    y = pp.common_average_reference(x)
    assert y[3, 0] == 18 and np.all(np.delete(y[:, 0], 3) == -1)
    z = pp.common_average_reference(np.random.default_rng(1).normal(size=(19, 300)))
    assert np.abs(z.mean(axis=0)).max() < 1e-12


def test_car_commutes_with_channel_permutation():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(19, 100))
    perm = rng.permutation(19)
    np.testing.assert_allclose(pp.common_average_reference(x[perm]),
                               pp.common_average_reference(x)[perm])


def _clean(seconds, seed=0):
    return np.random.default_rng(seed).normal(0, 20, size=(19, int(seconds * 100)))


def test_305_seconds_gives_50_frames():
    fs = pp.slice_and_reject(_clean(305), pp.NORMAL, "r")
    assert isinstance(fs, pp.FrameSet) and len(fs) == 50
    assert fs.frames.shape == (50, 19, 600)


def test_294_seconds_is_excluded():
    out = pp.slice_and_reject(_clean(294), pp.NORMAL, "r")
    assert isinstance(out, pp.Excluded) and out.n_valid == 49


def test_single_sample_over_800uv_drops_frame():
    x = _clean(360)
    x[4, 3 * 600 + 17] = 801.0
    fs = pp.slice_and_reject(x, pp.PATHOLOGICAL, "r")
    assert len(fs) == 59 and 3 not in fs.frame_index


def test_flat_channel_drops_frame():
    x = _clean(360)
    x[7, 600:1200] = 5.0
    fs = pp.slice_and_reject(x, pp.PATHOLOGICAL, "r")
    assert len(fs) == 59 and 1 not in fs.frame_index


def test_emitted_frames_pass_validity_recheck():
    x = _clean(400, seed=3)
    x[:, ::4999] = 900
    fs = pp.slice_and_reject(x, 1, "r")
    assert pp.frame_validity(fs.frames).all()


def test_reject_before_reference_switch():
    x = _clean(320)
    x[:, 50] += 850.0  # common-mode spike removed by referencing
    cfg_after = PreprocessConfig()
    cfg_before = PreprocessConfig(reject_after_reference=False)
    ref = pp.common_average_reference(x)
    after = pp.slice_and_reject(ref, 1, config=cfg_after)
    before = pp.slice_and_reject(ref, 1, config=cfg_before, check_signal=x)
    assert len(after) == 53 and len(before) == 52


def test_full_chain_on_edf(tmp_path):
    rng = np.random.default_rng(5)
    rate = 250
    data = rng.normal(0, 15, size=(19, 310 * rate))
    _, raw = parse_edf(write_edf(data, rate))
    fs = pp.preprocess_recording(raw, pp.NORMAL, "rec1", "F", "h0")
    assert isinstance(fs, pp.FrameSet) and len(fs) == 51
    path = tmp_path / "rec1.frames"
    pp.write_frame_archive(path, fs)
    back = pp.read_frame_archive(path)
    np.testing.assert_array_equal(back.frames, fs.frames)
    assert back.label == 1 and back.sex == "F" and back.hospital_id == "h0"
    pp.write_manifest(tmp_path / "m.jsonl", [pp.manifest_row(fs)])
    assert pp.read_manifest(tmp_path / "m.jsonl")[0]["n_frames"] == 51


def test_filtering_commutes_with_channel_permutation():
    rng = np.random.default_rng(4)
    raw = RawRecording(CHANNELS, rng.normal(size=(19, 2000)), 200.0)
    perm = rng.permutation(19)
    permuted = RawRecording(CHANNELS, raw.data[perm], 200.0)
    np.testing.assert_allclose(pp.filter_and_resample(permuted),
                               pp.filter_and_resample(raw)[perm], atol=1e-12)


def test_non_finite_frames_are_invalid():
    from eegpath.preprocess import frame_validity
    frames = np.random.default_rng(0).normal(0, 10, size=(3, 19, 600))
    frames[1, 4, 100] = np.nan
    frames[2, 0, 0] = np.inf
    np.testing.assert_array_equal(frame_validity(frames), [True, False, False])
