"""Labelled synthetic EEG corpora written as EDF files plus a manifest.

Each channel is pink noise (1/f power) mixed across channels, with an
alpha rhythm strongest over posterior sites, hospital-specific gain,
white noise floor and mains interference. Pathological recordings get a
band-power increase on selected channels and 3 Hz spike-wave bursts on
frontal channels, both scaled by a per-recording severity. Per-recording
random band-power gains model between-subject variability. Labels follow the normality convention (1 = normal).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .edf_io import CHANNELS, write_edf
from .preprocess import NORMAL, PATHOLOGICAL
from .seeding import derive_seed, rng

FRONTAL = ("Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8")
POSTERIOR = ("P3", "Pz", "P4", "O1", "O2", "T5", "T6")


@dataclass(frozen=True)
class HospitalEffect:
    gain: float = 1.0
    noise_floor_uv: float = 2.0
    rate: int = 250
    mains_hz: float = 50.0
    mains_uv: float = 5.0


@dataclass(frozen=True)
class BandPowerShift:
    band: tuple = (1.0, 4.0)
    channels: tuple = FRONTAL + ("C3", "Cz", "C4")
    factor: float = 3.0


@dataclass(frozen=True)
class PathologySignature:
    band_power_shift: BandPowerShift = field(default_factory=BandPowerShift)
    burst_rate: float = 2.0          # events per minute
    burst_amplitude_uv: float = 60.0
    burst_seconds: tuple = (1.0, 2.5)
    severity_range: tuple = (1.0, 1.0)   # per-recording scale of the log band-power shift


DEFAULT_HOSPITALS = (
    HospitalEffect(1.0, 2.0, 250, 50.0, 5.0),
    HospitalEffect(1.25, 4.0, 256, 50.0, 8.0),
    HospitalEffect(0.8, 3.0, 200, 50.0, 3.0),
)


@dataclass(frozen=True)
class CorpusSpec:
    n_recordings: int = 600
    pathology_fraction: float = 0.5
    n_hospitals: int = 3
    hospital_effects: tuple = DEFAULT_HOSPITALS
    pathology_signature: PathologySignature = field(default_factory=PathologySignature)
    duration_range: tuple = (300, 330)
    background_uv: float = 20.0
    alpha_uv: float = 12.0
    subject_variability: float = 0.0    # sd of per-recording log band-power gains
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.pathology_fraction < 1:
            raise ValueError("pathology_fraction must be in (0, 1)")
        if self.duration_range[0] < 300 or self.duration_range[1] < self.duration_range[0]:
            raise ValueError("durations must be >= 300 s")
        if self.n_hospitals < 1 or len(self.hospital_effects) < self.n_hospitals:
            raise ValueError("need one hospital effect per hospital")
        if self.n_recordings < 1:
            raise ValueError("n_recordings must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "CorpusSpec":
        d = dict(d)
        d["hospital_effects"] = tuple(HospitalEffect(**h) for h in d["hospital_effects"])
        sig = dict(d["pathology_signature"])
        shift = dict(sig["band_power_shift"])
        shift["band"], shift["channels"] = tuple(shift["band"]), tuple(shift["channels"])
        sig["band_power_shift"] = BandPowerShift(**shift)
        sig["burst_seconds"] = tuple(sig["burst_seconds"])
        sig["severity_range"] = tuple(sig.get("severity_range", (1.0, 1.0)))
        d["pathology_signature"] = PathologySignature(**sig)
        d["duration_range"] = tuple(d["duration_range"])
        return cls(**d)


REFERENCE_SIGNATURE = PathologySignature(BandPowerShift(factor=2.0), burst_rate=1.0,
                                         burst_amplitude_uv=40.0, severity_range=(0.0, 1.0))


def reference_spec(**overrides) -> CorpusSpec:
    """The repository's reference corpus (600 recordings, 3 hospitals): a
    graded pathology effect over between-subject spectral variability, so
    the classes overlap."""
    base = CorpusSpec(pathology_signature=REFERENCE_SIGNATURE, subject_variability=0.35)
    return replace(base, **overrides)


def null_spec(**overrides) -> CorpusSpec:
    """No pathology effect: classes are identical by construction."""
    sig = PathologySignature(BandPowerShift(factor=1.0), burst_rate=0.0)
    return replace(CorpusSpec(pathology_signature=sig), **overrides)


def strong_spec(**overrides) -> CorpusSpec:
    """Fixed, large effect without subject variability: nearly separable."""
    sig = PathologySignature(BandPowerShift(factor=3.0), burst_rate=2.0)
    return replace(CorpusSpec(pathology_signature=sig), **overrides)


PRESETS = {"default": reference_spec, "reference": reference_spec, "null": null_spec,
           "strong": strong_spec}


# --- signal synthesis -------------------------------------------------------------

def _channel_index(names):
    return [CHANNELS.index(c) for c in names]


def mixing_matrix(seed: int) -> np.ndarray:
    """Fixed channel mixing giving correlated, well-conditioned covariances."""
    g = rng(seed, "mixing")
    n = len(CHANNELS)
    m = np.eye(n) + 0.35 * g.normal(size=(n, n)) / np.sqrt(n)
    return m / np.linalg.norm(m, axis=1, keepdims=True)


SUBJECT_BANDS = ((0.0, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0), (30.0, np.inf))


def pink_noise(g, n_channels, n_samples, rate, band_gain=None):
    """Unit-variance noise with 1/f power; ``band_gain(freqs) -> (n_channels,
    n_freqs)`` optionally scales amplitudes per frequency and channel."""
    freqs = np.fft.rfftfreq(n_samples, 1.0 / rate)
    shape = np.zeros_like(freqs)
    shape[1:] = 1.0 / np.sqrt(np.maximum(freqs[1:], 0.5))
    spec = (g.normal(size=(n_channels, len(freqs))) + 1j * g.normal(size=(n_channels, len(freqs))))
    spec *= shape
    x = np.fft.irfft(spec, n=n_samples, axis=-1)
    scale = x.std(axis=-1, keepdims=True)
    if band_gain is not None:
        x = np.fft.irfft(np.fft.rfft(x, axis=-1) * band_gain(freqs), n=n_samples, axis=-1)
    return x / scale


def spike_wave(rate, seconds, amplitude):
    """3 Hz spike-and-slow-wave train (negative spike, positive slow wave)."""
    t = np.arange(int(round(seconds * rate))) / rate
    phase = (t * 3.0) % 1.0
    spike = -np.exp(-0.5 * ((phase - 0.1) / 0.025) ** 2)
    wave = 0.6 * np.sin(np.pi * np.clip((phase - 0.2) / 0.8, 0, 1))
    taper = np.sqrt(np.clip(np.sin(np.pi * t / t[-1]), 0, 1)) if len(t) > 1 else np.ones(1)
    return amplitude * (spike + wave) * taper


def synthesize(spec: CorpusSpec, label: int, hospital: int, duration: int, seed: int):
    """One recording, (19, duration * rate) microvolts."""
    g = np.random.default_rng(seed)
    h = spec.hospital_effects[hospital]
    rate, n = h.rate, duration * h.rate
    n_ch = len(CHANNELS)
    sig = spec.pathology_signature
    shift = sig.band_power_shift
    pathological = label == PATHOLOGICAL

    # per-recording log power gains: a global part per band plus a per-channel part
    sigma = spec.subject_variability
    log_gain = (sigma * g.normal(size=(1, len(SUBJECT_BANDS)))
                + 0.5 * sigma * g.normal(size=(n_ch, len(SUBJECT_BANDS))))
    severity = g.uniform(*sig.severity_range)
    rows = _channel_index(shift.channels)
    shifted = pathological and shift.factor != 1.0 and severity > 0

    def band_gain(freqs):
        log_power = np.zeros((n_ch, len(freqs)))
        for b, (lo, hi) in enumerate(SUBJECT_BANDS):
            inside = (freqs >= lo) & (freqs < hi)
            log_power[:, inside] += log_gain[:, b:b + 1]
        if shifted:
            inside = np.flatnonzero((freqs >= shift.band[0]) & (freqs <= shift.band[1]))
            log_power[np.ix_(rows, inside)] += severity * np.log(shift.factor)
        return np.exp(0.5 * log_power)

    # background: mixed pink noise; the band shift is applied before mixing
    x = mixing_matrix(spec.seed) @ pink_noise(g, n_ch, n, rate,
                                              band_gain if sigma > 0 or shifted else None)
    x *= spec.background_uv

    t = np.arange(n) / rate
    alpha_f = g.uniform(9.0, 11.0)
    envelope = 1.0 + 0.5 * np.sin(2 * np.pi * g.uniform(0.05, 0.2) * t + g.uniform(0, 2 * np.pi))
    alpha = np.sin(2 * np.pi * alpha_f * t + g.uniform(0, 2 * np.pi)) * envelope
    weights = np.full(n_ch, 0.3)
    weights[_channel_index(POSTERIOR)] = 1.0
    x += spec.alpha_uv * weights[:, None] * alpha

    if pathological and sig.burst_rate > 0:
        n_bursts = g.poisson(severity * sig.burst_rate * duration / 60.0)
        frontal = _channel_index(FRONTAL)
        chan_w = g.uniform(0.7, 1.0, len(frontal))
        for _ in range(n_bursts):
            burst = spike_wave(rate, g.uniform(*sig.burst_seconds), sig.burst_amplitude_uv)
            start = g.integers(0, max(1, n - len(burst)))
            seg = slice(start, start + len(burst))
            x[frontal, seg] += chan_w[:, None] * burst[: n - start]

    x *= h.gain
    x += h.noise_floor_uv * g.normal(size=x.shape)
    x += h.mains_uv * np.sin(2 * np.pi * h.mains_hz * t + g.uniform(0, 2 * np.pi))
    return x


# --- corpus ------------------------------------------------------------------------

def assignments(spec: CorpusSpec):
    """Per-recording (label, hospital, sex, duration), fully determined by the seed."""
    g = rng(spec.seed, "assign")
    n = spec.n_recordings
    n_path = int(round(spec.pathology_fraction * n))
    labels = np.array([PATHOLOGICAL] * n_path + [NORMAL] * (n - n_path))
    g.shuffle(labels)
    hospitals = np.arange(n) % spec.n_hospitals
    g.shuffle(hospitals)
    sexes = g.choice(np.array(["F", "M"]), n)
    lo, hi = spec.duration_range
    durations = g.integers(lo, hi + 1, n)
    return labels, hospitals, sexes, durations


def generate_corpus(spec: CorpusSpec, out_dir, progress=None) -> list[dict]:
    """Write ``<id>.edf`` files, ``manifest.jsonl`` and ``corpus_spec.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels, hospitals, sexes, durations = assignments(spec)
    rows = []
    for i in range(spec.n_recordings):
        rid = f"rec{i:05d}"
        hosp = int(hospitals[i])
        data = synthesize(spec, int(labels[i]), hosp, int(durations[i]),
                          derive_seed(spec.seed, "recording", i))
        rate = spec.hospital_effects[hosp].rate
        (out / f"{rid}.edf").write_bytes(write_edf(data, rate))
        rows.append({"recording_id": rid, "label": int(labels[i]), "sex": str(sexes[i]),
                     "hospital_id": f"H{hosp}", "path": f"{rid}.edf", "rate": rate,
                     "duration_s": int(durations[i])})
        if progress:
            progress(i, rows[-1])
    with open(out / "manifest.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    (out / "corpus_spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return rows


def generate_in_memory(spec: CorpusSpec):
    """Yield (row, RawRecording) without touching disk (EDF round trip included)."""
    from .edf_io import parse_edf
    labels, hospitals, sexes, durations = assignments(spec)
    for i in range(spec.n_recordings):
        hosp = int(hospitals[i])
        data = synthesize(spec, int(labels[i]), hosp, int(durations[i]),
                          derive_seed(spec.seed, "recording", i))
        _, raw = parse_edf(write_edf(data, spec.hospital_effects[hosp].rate))
        row = {"recording_id": f"rec{i:05d}", "label": int(labels[i]), "sex": str(sexes[i]),
               "hospital_id": f"H{hosp}"}
        yield row, raw
