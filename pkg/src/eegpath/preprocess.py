"""Filtering, resampling, re-referencing and framing of raw EEG.

The fixed pipeline is notch -> high-pass -> low-pass -> resample to
100 Hz -> common average reference -> 6 s frames -> artifact rejection.
Labels follow the normality convention: 1 = normal, 0 = pathological.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal

from .edf_io import RawRecording

NORMAL, PATHOLOGICAL = 1, 0


class PreprocessError(ValueError):
    pass


class FreqAboveNyquist(PreprocessError):
    pass


class SpecInfeasible(PreprocessError):
    pass


class UnsupportedRate(PreprocessError):
    pass


@dataclass(frozen=True)
class FilterSpec:
    """Filter request. For Butterworth kinds ``order=None`` means "minimum
    order meeting the mask" (passband deviation / stopband attenuation)."""

    kind: str
    cutoff: float | None = None
    order: int | None = None
    notch_freq: float | None = None
    notch_q: float | None = None
    pass_edge: float | None = None
    stop_edge: float | None = None
    max_ripple_db: float = 1.0
    min_attenuation_db: float = 20.0
    max_order: int = 16

    def __post_init__(self):
        if self.kind not in ("notch", "highpass", "lowpass"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.kind == "notch":
            if self.notch_freq is None or self.notch_q is None or self.notch_q <= 0:
                raise ValueError("notch needs notch_freq and notch_q > 0")
        else:
            if self.cutoff is None or self.cutoff <= 0:
                raise ValueError("cutoff must be positive")
            if self.order is not None and self.order < 1:
                raise ValueError("order must be >= 1")


HIGHPASS = FilterSpec("highpass", cutoff=0.1, pass_edge=0.5)
LOWPASS = FilterSpec("lowpass", cutoff=40.0, pass_edge=35.0, stop_edge=50.0)


@dataclass(frozen=True)
class PreprocessConfig:
    mains_freq: float = 50.0
    notch_q: float = 5.0
    highpass: FilterSpec = HIGHPASS
    lowpass: FilterSpec = LOWPASS
    target_rate: int = 100
    frame_seconds: float = 6.0
    max_abs_uv: float = 800.0
    flat_variance: float = 1e-12
    min_valid_frames: int = 50
    zero_phase: bool = False
    reject_after_reference: bool = True

    @property
    def frame_length(self) -> int:
        return int(round(self.frame_seconds * self.target_rate))


@dataclass
class FrameSet:
    """Valid frames of one recording.

    ``frames`` is (n_frames, 19, frame_length) float32 microvolts;
    ``frame_index`` holds each frame's ordinal within the recording.
    """

    recording_id: str
    frames: np.ndarray
    label: int
    sex: str = ""
    hospital_id: str = ""
    frame_index: np.ndarray | None = None

    def __post_init__(self):
        if self.frame_index is None:
            self.frame_index = np.arange(len(self.frames))

    def __len__(self):
        return len(self.frames)

    @property
    def metadata(self) -> dict:
        return {"sex": self.sex, "hospital_id": self.hospital_id,
                "recording_id": self.recording_id}


@dataclass
class Excluded:
    """A recording dropped by artifact rejection (not an error)."""

    recording_id: str
    n_valid: int
    reason: str = "too few valid frames"


# --- filters -----------------------------------------------------------------

def _apply(b_or_sos, x, zero_phase, sos=True):
    if sos:
        if zero_phase:
            return signal.sosfiltfilt(b_or_sos, x, axis=-1)
        return signal.sosfilt(b_or_sos, x, axis=-1)
    b, a = b_or_sos
    if zero_phase:
        return signal.filtfilt(b, a, x, axis=-1)
    return signal.lfilter(b, a, x, axis=-1)


def notch(x, freq: float, q: float, rate: float, zero_phase: bool = False):
    """Second-order IIR notch (unit DC gain) applied along the last axis."""
    if freq >= rate / 2:
        raise FreqAboveNyquist(f"notch at {freq} Hz is not below Nyquist ({rate / 2} Hz)")
    b, a = signal.iirnotch(freq, q, fs=rate)
    return _apply((b, a), np.asarray(x, dtype=np.float64), zero_phase, sos=False)


def mask_deviation(sos, spec: FilterSpec, rate: float) -> tuple[float, float]:
    """Measured (max passband deviation dB, min stopband attenuation dB)."""
    nyq = rate / 2
    if spec.kind == "lowpass":
        passband = np.linspace(0.0, spec.pass_edge, 512)
        stopband = np.linspace(spec.stop_edge, nyq, 2048) if spec.stop_edge and spec.stop_edge < nyq else None
    else:
        passband = np.linspace(spec.pass_edge, nyq, 2048)
        stopband = None
    _, h = signal.sosfreqz(sos, worN=passband, fs=rate)
    ripple = float(np.max(np.abs(20 * np.log10(np.maximum(np.abs(h), 1e-300)))))
    if stopband is None:
        return ripple, np.inf
    _, h = signal.sosfreqz(sos, worN=stopband, fs=rate)
    atten = float(-20 * np.log10(np.maximum(np.abs(h).max(), 1e-300)))
    return ripple, atten


def design_butterworth(spec: FilterSpec, rate: float):
    """Return (sos, order) of the lowest-order Butterworth meeting the mask."""
    if spec.cutoff >= rate / 2:
        raise SpecInfeasible(f"cutoff {spec.cutoff} Hz is not below Nyquist")
    btype = "lowpass" if spec.kind == "lowpass" else "highpass"
    orders = [spec.order] if spec.order is not None else range(1, spec.max_order + 1)
    for order in orders:
        sos = signal.butter(order, spec.cutoff, btype=btype, fs=rate, output="sos")
        ripple, atten = mask_deviation(sos, spec, rate)
        if ripple < spec.max_ripple_db and atten >= spec.min_attenuation_db:
            return sos, order
    raise SpecInfeasible(f"no Butterworth {spec.kind} up to order {orders[-1]} "
                         f"meets the mask at {rate} Hz")


def butterworth(x, spec: FilterSpec, rate: float, zero_phase: bool = False):
    sos, _ = design_butterworth(spec, rate)
    return _apply(sos, np.asarray(x, dtype=np.float64), zero_phase)


def resample(x, from_rate: float, to_rate: float = 100):
    """Polyphase rational resampling; output length is floor(n * to / from)."""
    if from_rate <= 0 or to_rate <= 0:
        raise UnsupportedRate("sampling rates must be positive")
    x = np.asarray(x, dtype=np.float64)
    if from_rate == to_rate:
        return x.copy()
    ratio = Fraction(to_rate).limit_denominator(10_000) / Fraction(from_rate).limit_denominator(10_000)
    out = signal.resample_poly(x, ratio.numerator, ratio.denominator, axis=-1)
    n_out = int(np.floor(x.shape[-1] * to_rate / from_rate + 1e-9))
    return out[..., :n_out]


def common_average_reference(x):
    """Subtract the instantaneous across-channel mean (channels on axis -2)."""
    x = np.asarray(x, dtype=np.float64)
    return x - x.mean(axis=-2, keepdims=True)


# --- framing -----------------------------------------------------------------

def frame_validity(frames, max_abs_uv=800.0, flat_variance=1e-12):
    """Boolean validity per frame: finite, no flat channel and no |v| > max_abs_uv."""
    frames = np.asarray(frames)
    flat = (frames.var(axis=-1) < flat_variance).any(axis=-1)
    spiky = ~(np.abs(frames) <= max_abs_uv).all(axis=(-1, -2))
    return ~(flat | spiky)


def slice_frames(x, frame_length=600):
    n = x.shape[-1] // frame_length
    trimmed = x[..., :n * frame_length]
    return trimmed.reshape(x.shape[0], n, frame_length).transpose(1, 0, 2)


def slice_and_reject(x, label: int, recording_id: str = "", sex: str = "",
                     hospital_id: str = "", config: PreprocessConfig = PreprocessConfig(),
                     check_signal=None):
    """Cut a 100 Hz (19, n) signal into adjacent frames and drop artifacts.

    ``check_signal`` optionally supplies the signal on which validity is
    judged (e.g. before re-referencing); frames are always taken from ``x``.
    Returns a FrameSet, or Excluded when fewer than the minimum remain.
    """
    frames = slice_frames(np.asarray(x, dtype=np.float64), config.frame_length)
    judged = frames if check_signal is None else slice_frames(
        np.asarray(check_signal, dtype=np.float64), config.frame_length)
    valid = frame_validity(judged, config.max_abs_uv, config.flat_variance)
    n_valid = int(valid.sum())
    if n_valid < config.min_valid_frames:
        return Excluded(recording_id, n_valid)
    idx = np.flatnonzero(valid)
    return FrameSet(recording_id, frames[idx].astype(np.float32), int(label),
                    sex, hospital_id, idx)


def filter_and_resample(raw: RawRecording, config: PreprocessConfig = PreprocessConfig()):
    x = notch(raw.data, config.mains_freq, config.notch_q, raw.rate, config.zero_phase)
    x = butterworth(x, config.highpass, raw.rate, config.zero_phase)
    x = butterworth(x, config.lowpass, raw.rate, config.zero_phase)
    return resample(x, raw.rate, config.target_rate)


def preprocess_recording(raw: RawRecording, label: int, recording_id: str = "",
                         sex: str = "", hospital_id: str = "",
                         config: PreprocessConfig = PreprocessConfig()):
    """Run the full chain on one recording; returns FrameSet or Excluded."""
    x = filter_and_resample(raw, config)
    referenced = common_average_reference(x)
    check = None if config.reject_after_reference else x
    return slice_and_reject(referenced, label, recording_id, sex, hospital_id,
                            config, check_signal=check)


# --- frame archive and manifest ----------------------------------------------

_MAGIC = b"EEGFRM01"


def write_frame_archive(path, frameset: FrameSet) -> None:
    """Layout: 8-byte magic, uint32 LE header length, UTF-8 JSON header,
    then frames as little-endian float32 in (frame, channel, sample) order."""
    frames = np.ascontiguousarray(frameset.frames, dtype="<f4")
    header = {
        "recording_id": frameset.recording_id, "label": int(frameset.label),
        "sex": frameset.sex, "hospital_id": frameset.hospital_id,
        "n_frames": int(frames.shape[0]), "n_channels": int(frames.shape[1]),
        "n_samples": int(frames.shape[2]),
        "frame_index": [int(i) for i in frameset.frame_index],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(frames.tobytes())


def read_frame_archive(path) -> FrameSet:
    buf = Path(path).read_bytes()
    if buf[:8] != _MAGIC:
        raise ValueError(f"{path}: not a frame archive")
    (n,) = struct.unpack("<I", buf[8:12])
    header = json.loads(buf[12:12 + n].decode("utf-8"))
    shape = (header["n_frames"], header["n_channels"], header["n_samples"])
    frames = np.frombuffer(buf, dtype="<f4", offset=12 + n,
                           count=int(np.prod(shape))).reshape(shape).astype(np.float32)
    return FrameSet(header["recording_id"], frames, header["label"], header["sex"],
                    header["hospital_id"], np.asarray(header["frame_index"]))


MANIFEST_FIELDS = ("recording_id", "label", "sex", "hospital_id", "n_frames")


def write_manifest(path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps({k: row[k] for k in row}, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def manifest_row(frameset: FrameSet) -> dict:
    return {"recording_id": frameset.recording_id, "label": int(frameset.label),
            "sex": frameset.sex, "hospital_id": frameset.hospital_id,
            "n_frames": len(frameset)}
