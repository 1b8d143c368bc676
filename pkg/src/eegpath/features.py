"""Handcrafted per-recording features.

Three groups, concatenated in this order:

* 190 tangent-space coordinates of the recording's Riemannian mean
  channel covariance,
* 266 normalised multitaper band powers (19 channels x 14 bands),
* 2,394 band-wise coherences (171 channel pairs x 14 bands).

Per-frame powers and coherences are aggregated with the median over
frames; covariances with the affine-invariant Karcher mean.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal.windows import dpss

from .edf_io import CHANNELS

BANDS = (
    (0.5, 2.0), (1.0, 3.0), (2.0, 4.0), (3.0, 6.0), (4.0, 8.0), (6.0, 10.0),
    (8.0, 13.0), (10.0, 15.0), (13.0, 18.0), (15.0, 21.0), (18.0, 24.0),
    (21.0, 27.0), (24.0, 30.0), (27.0, 40.0),
)
N_CHANNELS = len(CHANNELS)
PAIRS = tuple(zip(*np.triu_indices(N_CHANNELS, k=1)))
N_TIME = N_CHANNELS * (N_CHANNELS + 1) // 2
N_POWER = N_CHANNELS * len(BANDS)
N_COHERENCE = len(PAIRS) * len(BANDS)
N_FEATURES = N_TIME + N_POWER + N_COHERENCE
RF_SLICE = slice(N_TIME, N_FEATURES)  # power + coherence only

RIDGE = 1e-6
RIDGE_FLOOR = 1e-10


class DegenerateFrame(ValueError):
    pass


class NotSpd(ValueError):
    pass


class KarcherConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class MultitaperConfig:
    rate: float = 100.0
    time_bandwidth: float = 4.0
    n_tapers: int = 7
    bands: tuple = BANDS


DEFAULT_MT = MultitaperConfig()


@lru_cache(maxsize=8)
def _tapers(n_samples: int, nw: float, k: int) -> np.ndarray:
    return dpss(n_samples, nw, Kmax=k)


def band_masks(n_samples: int, rate: float, bands=BANDS) -> np.ndarray:
    """(n_bands, n_freqs) boolean membership of rfft bins, edges inclusive."""
    freqs = np.fft.rfftfreq(n_samples, 1.0 / rate)
    eps = 1e-9
    return np.array([(freqs >= lo - eps) & (freqs <= hi + eps) for lo, hi in bands])


def band_cross_spectra(frames, config: MultitaperConfig = DEFAULT_MT) -> np.ndarray:
    """Band-integrated multitaper cross-spectral matrices.

    Parameters
    ----------
    frames : ndarray, shape (..., n_channels, n_samples)

    Returns
    -------
    csd : ndarray, shape (..., n_bands, n_channels, n_channels), complex
        Hermitian in the last two axes; the diagonal holds band powers.
    """
    frames = np.asarray(frames, dtype=np.float64)
    n = frames.shape[-1]
    tapers = _tapers(n, config.time_bandwidth, config.n_tapers)
    tapered = frames[..., None, :, :] * tapers[:, None, :]
    spectra = np.fft.rfft(tapered, axis=-1)          # (..., K, C, F)
    df = config.rate / n
    scale = 2.0 * df / (config.rate * config.n_tapers)
    masks = band_masks(n, config.rate, config.bands)
    groups, membership = _bin_groups(masks)
    lead = frames.shape[:-2]
    c = frames.shape[-2]
    # overlapping bands share bins: accumulate each disjoint bin run once;
    # (..., C, F, K) layout makes every run a contiguous (C, nb * K) view
    lo, hi = groups[0][0], groups[-1][1]
    spectra = np.ascontiguousarray(np.moveaxis(spectra[..., lo:hi], -3, -1))
    parts = np.empty(lead + (len(groups), c, c), dtype=complex)
    for g, (a, b) in enumerate(groups):
        xb = spectra[..., a - lo:b - lo, :].reshape(lead + (c, -1))
        parts[..., g, :, :] = xb @ np.conj(np.swapaxes(xb, -1, -2))
    out = np.moveaxis(np.tensordot(membership, parts, axes=([1], [-3])), 0, -3)
    return scale * out


@lru_cache(maxsize=8)
def _bin_groups_cached(key, shape):
    masks = np.frombuffer(key, dtype=bool).reshape(shape)
    used = np.flatnonzero(masks.any(axis=0))
    sig = masks[:, used].T
    change = np.r_[True, np.any(sig[1:] != sig[:-1], axis=1) | (np.diff(used) != 1)]
    starts = np.flatnonzero(change)
    ends = np.r_[starts[1:], len(used)]
    groups = tuple((int(used[a]), int(used[b - 1]) + 1) for a, b in zip(starts, ends))
    membership = np.array([[masks[b, a] for a, _ in groups] for b in range(len(masks))],
                          dtype=float)
    return groups, membership


def _bin_groups(masks):
    """Split the bins covered by ``masks`` into contiguous runs with
    identical band membership; returns ((start, stop) runs, (n_bands,
    n_runs) 0/1 membership)."""
    masks = np.ascontiguousarray(masks, dtype=bool)
    return _bin_groups_cached(masks.tobytes(), masks.shape)


def _band_powers(csd):
    power = np.real(np.diagonal(csd, axis1=-2, axis2=-1))   # (..., B, C)
    return np.swapaxes(power, -1, -2)                        # (..., C, B)


def multitaper_psd(frame, config: MultitaperConfig = DEFAULT_MT) -> np.ndarray:
    """Normalised band powers of one frame, shape (n_channels, n_bands).

    All cells sum to one, so the result is invariant to global gain.
    """
    power = _band_powers(band_cross_spectra(frame, config))
    total = power.sum()
    if not total > 0:
        raise DegenerateFrame("frame has zero power; normalisation undefined")
    return power / total


def _coherence_from_csd(csd):
    power = np.real(np.diagonal(csd, axis1=-2, axis2=-1))
    if np.any(power <= 0):
        raise DegenerateFrame("zero auto-spectrum in at least one band")
    denom = np.sqrt(power[..., :, None] * power[..., None, :])
    return np.clip(np.abs(csd) / denom, 0.0, 1.0)


def coherence_matrix(frame, config: MultitaperConfig = DEFAULT_MT) -> np.ndarray:
    """Full band-wise coherence matrices, shape (n_bands, n_channels, n_channels)."""
    return _coherence_from_csd(band_cross_spectra(frame, config))


def coherence(frame, config: MultitaperConfig = DEFAULT_MT) -> np.ndarray:
    """Coherence for the 171 channel pairs x < y, shape (171, n_bands)."""
    full = coherence_matrix(frame, config)
    iu, ju = np.triu_indices(full.shape[-1], k=1)
    return full[..., iu, ju].T


# --- SPD geometry ------------------------------------------------------------

def _eig_apply(mats, fn):
    w, v = np.linalg.eigh(mats)
    return (v * fn(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


def sqrtm(c):
    return _eig_apply(c, np.sqrt)


def invsqrtm(c):
    return _eig_apply(c, lambda w: 1.0 / np.sqrt(w))


def logm(c):
    return _eig_apply(c, np.log)


def expm(c):
    return _eig_apply(c, np.exp)


def _check_spd(c, what="matrix"):
    c = np.asarray(c, dtype=np.float64)
    if c.shape[-1] != c.shape[-2] or not np.allclose(c, np.swapaxes(c, -1, -2), rtol=1e-10, atol=0):
        raise NotSpd(f"{what} is not symmetric")
    if np.linalg.eigvalsh(c).min() <= 0:
        raise NotSpd(f"{what} is not positive definite")
    return c


def frame_covariance(frame) -> np.ndarray:
    """Ridge-regularised channel covariance of one or more frames.

    Divisor is the number of samples; ridge = 1e-6 * trace / n_channels
    (floored at 1e-10) so the result is always SPD.
    """
    x = np.asarray(frame, dtype=np.float64)
    x = x - x.mean(axis=-1, keepdims=True)
    cov = x @ np.swapaxes(x, -1, -2) / x.shape[-1]
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    n = cov.shape[-1]
    trace = np.trace(cov, axis1=-2, axis2=-1)
    ridge = np.maximum(RIDGE * trace / n, RIDGE_FLOOR)
    return cov + ridge[..., None, None] * np.eye(n)


def riemannian_mean(mats, tol: float = 1e-9, max_iter: int = 50) -> np.ndarray:
    """Affine-invariant Karcher mean of SPD matrices by fixed-point iteration.

    Iterates ``M <- M^1/2 exp(mean_i log(M^-1/2 C_i M^-1/2)) M^1/2`` until
    the Frobenius norm of the tangent mean drops below ``tol``. If the
    iteration cap is reached the best iterate is returned and a
    :class:`KarcherConvergenceWarning` is issued.
    """
    mats = np.asarray(mats, dtype=np.float64)
    if mats.ndim == 2:
        mats = mats[None]
    if len(mats) == 0:
        raise ValueError("riemannian_mean needs at least one matrix")
    if np.all(mats == mats[0]):
        return mats[0].copy()
    mean = mats.mean(axis=0)
    best, best_norm = mean, np.inf
    for _ in range(max_iter):
        w, v = np.linalg.eigh(mean)
        half = (v * np.sqrt(w)) @ v.T
        inv_half = (v / np.sqrt(w)) @ v.T
        tangent = logm(inv_half @ mats @ inv_half).mean(axis=0)
        norm = np.linalg.norm(tangent)
        if norm < best_norm:
            best, best_norm = mean, norm
        if norm < tol:
            return mean
        mean = half @ expm(tangent) @ half
        mean = 0.5 * (mean + mean.T)
    warnings.warn(f"Karcher mean did not reach tol={tol} in {max_iter} iterations "
                  f"(tangent norm {best_norm:.3g})", KarcherConvergenceWarning, stacklevel=2)
    return best


def tangent_project(reference, mats) -> np.ndarray:
    """Log-map SPD matrices at ``reference`` and vectorise the upper triangle.

    Off-diagonal coordinates are scaled by sqrt(2) so the Euclidean norm of
    the vector equals the Frobenius norm of the tangent matrix.
    """
    reference = _check_spd(reference, "reference")
    mats = np.asarray(mats, dtype=np.float64)
    inv_half = invsqrtm(reference)
    s = logm(inv_half @ mats @ inv_half)
    n = reference.shape[-1]
    iu = np.triu_indices(n)
    weights = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    return s[..., iu[0], iu[1]] * weights


# --- recording-level aggregation --------------------------------------------

@dataclass
class RecordingSummary:
    """Reference-independent per-recording features.

    The tangent-space block needs a population reference, so the recording's
    Karcher-mean covariance is kept and projected later (per CV step).
    """

    recording_id: str
    label: int
    band_power: np.ndarray      # (266,)
    coherence: np.ndarray       # (2394,)
    covariance: np.ndarray      # (19, 19)
    sex: str = ""
    hospital_id: str = ""


@dataclass
class FeatureVector:
    time_riemann: np.ndarray
    band_power: np.ndarray
    coherence: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.time_riemann, self.band_power, self.coherence])

    def __len__(self):
        return len(self.time_riemann) + len(self.band_power) + len(self.coherence)


def summarize_frames(frames, config: MultitaperConfig = DEFAULT_MT, chunk: int = 64):
    """Median band power, median coherence and Karcher-mean covariance.

    Frames whose spectra are degenerate are skipped; DegenerateFrame is
    raised only when every frame is degenerate.
    """
    frames = np.asarray(frames)
    powers, cohs, covs = [], [], []
    iu, ju = np.triu_indices(frames.shape[-2], k=1)
    for start in range(0, len(frames), chunk):
        block = np.asarray(frames[start:start + chunk], dtype=np.float64)
        csd = band_cross_spectra(block, config)
        power = _band_powers(csd)                          # (n, C, B)
        auto = np.real(np.diagonal(csd, axis1=-2, axis2=-1))
        ok = (auto > 0).all(axis=(-1, -2))
        if not ok.any():
            continue
        csd, power, block = csd[ok], power[ok], block[ok]
        powers.append(power / power.sum(axis=(-1, -2), keepdims=True))
        coh = _coherence_from_csd(csd)[..., iu, ju]        # (n, B, P)
        cohs.append(np.swapaxes(coh, -1, -2))              # (n, P, B)
        covs.append(frame_covariance(block))
    if not powers:
        raise DegenerateFrame("every frame in the recording is degenerate")
    power = np.median(np.concatenate(powers), axis=0).reshape(-1)
    coh = np.median(np.concatenate(cohs), axis=0).reshape(-1)
    cov = riemannian_mean(np.concatenate(covs))
    return power, coh, cov


def summarize_recording(frameset, config: MultitaperConfig = DEFAULT_MT) -> RecordingSummary:
    power, coh, cov = summarize_frames(frameset.frames, config)
    return RecordingSummary(frameset.recording_id, int(frameset.label), power, coh, cov,
                            frameset.sex, frameset.hospital_id)


def extract_recording_features(frameset, reference_mean=None,
                               config: MultitaperConfig = DEFAULT_MT) -> FeatureVector:
    """All 2,850 features of one recording.

    ``reference_mean`` is the tangent-space reference (normally the Karcher
    mean of the training recordings' means); None projects at the identity.
    """
    power, coh, cov = summarize_frames(frameset.frames, config)
    ref = np.eye(cov.shape[0]) if reference_mean is None else reference_mean
    return FeatureVector(tangent_project(ref, cov), power, coh)


def reference_mean(summaries) -> np.ndarray:
    return riemannian_mean(np.stack([s.covariance for s in summaries]))


def feature_matrix(summaries, reference) -> np.ndarray:
    """Stack summaries into an (n_recordings, 2850) design matrix."""
    covs = np.stack([s.covariance for s in summaries])
    time = tangent_project(reference, covs)
    power = np.stack([s.band_power for s in summaries])
    coh = np.stack([s.coherence for s in summaries])
    return np.hstack([time, power, coh])


def _band_name(band):
    return f"{band[0]:g}-{band[1]:g}Hz"


def feature_names() -> list[str]:
    iu = np.triu_indices(N_CHANNELS)
    names = [f"riem_{CHANNELS[i]}_{CHANNELS[j]}" for i, j in zip(*iu)]
    names += [f"pow_{ch}_{_band_name(b)}" for ch in CHANNELS for b in BANDS]
    names += [f"coh_{CHANNELS[i]}_{CHANNELS[j]}_{_band_name(b)}" for i, j in PAIRS for b in BANDS]
    return names


def write_feature_file(path, ids, labels, matrix) -> None:
    """Comma-separated text: header, then recording_id, label, 2850 features."""
    matrix = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recording_id", "label"] + feature_names())
        for rid, lab, row in zip(ids, labels, matrix):
            writer.writerow([rid, int(lab)] + [repr(float(v)) for v in row])


def read_feature_file(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[2:] != feature_names():
            raise ValueError(f"{path}: unexpected feature columns")
        ids, labels, rows = [], [], []
        for row in reader:
            ids.append(row[0])
            labels.append(int(row[1]))
            rows.append([float(v) for v in row[2:]])
    return ids, np.array(labels), np.array(rows)


def write_summaries(path, summaries) -> None:
    """Reference-free summaries: metadata, 190 covariance upper-triangle
    entries (unscaled), then the 266 power and 2394 coherence features."""
    iu = np.triu_indices(N_CHANNELS)
    names = feature_names()
    cov_names = [f"cov_{CHANNELS[i]}_{CHANNELS[j]}" for i, j in zip(*iu)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recording_id", "label", "sex", "hospital_id"] + cov_names + names[N_TIME:])
        for s in summaries:
            writer.writerow([s.recording_id, int(s.label), s.sex, s.hospital_id]
                            + [repr(float(v)) for v in s.covariance[iu]]
                            + [repr(float(v)) for v in s.band_power]
                            + [repr(float(v)) for v in s.coherence])


def read_summaries(path) -> list[RecordingSummary]:
    iu = np.triu_indices(N_CHANNELS)
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            values = np.array([float(v) for v in row[4:]])
            cov = np.zeros((N_CHANNELS, N_CHANNELS))
            cov[iu] = values[:N_TIME]
            cov = cov + np.triu(cov, 1).T
            out.append(RecordingSummary(row[0], int(row[1]), values[N_TIME:N_TIME + N_POWER],
                                        values[N_TIME + N_POWER:], cov, row[2], row[3]))
    return out
