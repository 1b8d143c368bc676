"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Expected values are frozen literals (parameter counts, published
asymptotes, closed forms) or independent oracles computed in the test
(brute-force pair counting, permutation tests, closed-form SPD means).
"""

import time

import numpy as np
import pytest
import scipy.signal as sps

from eegpath import preprocess as pp
from eegpath.autodiff import Tensor, TransformerEncoderLayer
from eegpath.autodiff.gradcheck import check, check_parameters
from eegpath.evaluation import (auc, conover_iman, cross_validate_suite, elm_series, fdr_adjust,
                                fit_power_law, kruskal_wallis, leakage_violations,
                                stratified_folds)
from eegpath.features import (N_COHERENCE, N_FEATURES, N_POWER, N_TIME, RF_SLICE, feature_matrix,
                              reference_mean, riemannian_mean, sqrtm, invsqrtm)
from eegpath.neural_models import EEGNetEncoder, build_model, count_parameters
from eegpath.pipeline import desk_profile, full_suite, in_memory_dataset
from eegpath.synth_data import generate_in_memory, reference_spec

from test_autodiff import layer_cases


# --- 1. parameter counts ----------------------------------------------------------------

def test_criterion_01_parameter_counts(criterion):
    t0 = time.perf_counter()
    expected = {"siNet": 1697, "miNet": 1697, "MINet": 167_873, "TransNet": 4_717_793}
    got = {}
    for kind in expected:
        counts = count_parameters(build_model(kind))
        got[kind] = counts["total"]
        got[f"{kind}.encoder"] = counts["encoder"]
        got[f"{kind}.classifier"] = counts["classifier"]
        if kind in ("MINet", "TransNet"):
            got[f"{kind}.attention"] = counts["attention"]
        if kind == "TransNet":
            got["transformer_block"] = counts["transformer_block"]
    enc = sum(p.data.size for p in EEGNetEncoder().parameters())
    elapsed = time.perf_counter() - t0
    ok = (enc == 1408
          and all(got[f"{k}.encoder"] == 1408 and got[f"{k}.classifier"] == 289 for k in expected)
          and all(got[k] == v for k, v in expected.items())
          and got["MINet.attention"] == got["TransNet.attention"] == 166_176
          and got["transformer_block"] == 1_516_640
          and elapsed < 1.0)
    assert criterion(1, ok, f"encoder {enc}, totals {[got[k] for k in expected]}, "
                            f"attention {got['MINet.attention']}, block {got['transformer_block']}, "
                            f"{elapsed:.2f} s")


# --- reference corpus shared by criteria 2, 8 and 10 -------------------------------------------

@pytest.fixture(scope="module")
def reference_framesets():
    spec = reference_spec()
    out = []
    for row, raw in generate_in_memory(spec):
        fs = pp.preprocess_recording(raw, row["label"], row["recording_id"], row["sex"],
                                     row["hospital_id"])
        assert isinstance(fs, pp.FrameSet), row["recording_id"]
        out.append(fs)
    return out


@pytest.fixture(scope="module")
def reference_dataset(reference_framesets):
    t0 = time.perf_counter()
    ds = in_memory_dataset(reference_framesets, "reference")
    return ds, time.perf_counter() - t0


# --- 2. feature dimensions ----------------------------------------------------------------

def test_criterion_02_feature_dimensions(reference_dataset, criterion):
    ds, featurize_s = reference_dataset
    t0 = time.perf_counter()
    summaries = [ds._payloads[i].summary for i in ds.ids]
    X = feature_matrix(summaries, reference_mean(summaries))
    elapsed = featurize_s + time.perf_counter() - t0
    dims = (N_TIME, N_POWER, N_COHERENCE)
    rf_width = X[:, RF_SLICE].shape[1]
    ok = (dims == (190, 266, 2394) and X.shape == (600, 2850) and N_FEATURES == 2850
          and rf_width == 2660 and bool(np.isfinite(X).all()) and elapsed < 60.0)
    assert criterion(2, ok, f"{dims[0]} + {dims[1]} + {dims[2]} = {X.shape[1]} features x "
                            f"{X.shape[0]} recordings, RF {rf_width}, {elapsed:.1f} s")


# --- 3. scaling law from published means ------------------------------------------------------

def test_criterion_03_scaling_asymptotes(criterion):
    t0 = time.perf_counter()
    fits = {m: fit_power_law(*elm_series(m)[:2]) for m in ("META", "GBE")}
    elapsed = time.perf_counter() - t0
    meta, gbe = fits["META"].asymptote, fits["GBE"].asymptote
    ok = abs(meta - 91.3) <= 1.5 and abs(gbe - 87.1) <= 1.5 and elapsed < 1.0
    assert criterion(3, ok, f"META asymptote {meta:.2f} (91.3 +/- 1.5), GBE {gbe:.2f} "
                            f"(87.1 +/- 1.5), {elapsed:.2f} s")


# --- 4. gradient checks -----------------------------------------------------------------------

def test_criterion_04_gradients(criterion):
    t0 = time.perf_counter()
    worst, worst_name, n_checks = 0.0, "", 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        for name, fn, arrays in layer_cases(rng):
            err = check(fn, arrays, seed=seed)
            n_checks += 1
            if err > worst:
                worst, worst_name = err, name
        layer = TransformerEncoderLayer(dim=4, n_heads=2, ff_dim=6, dropout=0.0, rng=rng)
        x = rng.normal(size=(2, int(rng.integers(2, 5)), 4))
        mask = np.ones(x.shape[:2], bool)
        mask[0, -1] = False
        for err in (check(lambda t: layer(t[0], mask), [x], seed=seed),
                    check_parameters(lambda: layer(Tensor(x), mask), layer.parameters(), seed)):
            n_checks += 1
            if err > worst:
                worst, worst_name = err, "transformer_encoder_layer"
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 120.0
    assert criterion(4, ok, f"{n_checks} checks over 20 seeds, max rel error {worst:.2e} "
                            f"({worst_name}), {elapsed:.1f} s")


# --- 5. Riemannian oracle ---------------------------------------------------------------------

def _random_spd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T + n * 0.1 * np.eye(n)


def test_criterion_05_karcher_mean(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_closed, worst_congruence = 0.0, 0.0
    for _ in range(100):
        n = int(rng.integers(2, 20))
        a, b = _random_spd(rng, n), _random_spd(rng, n)
        ah, aih = sqrtm(a), invsqrtm(a)
        closed = ah @ sqrtm(aih @ b @ aih) @ ah
        mean = riemannian_mean(np.stack([a, b]))
        worst_closed = max(worst_closed, np.abs(mean - closed).max() / np.abs(closed).max())
        g = rng.normal(size=(n, n)) + n * np.eye(n)
        moved = riemannian_mean(np.stack([g @ a @ g.T, g @ b @ g.T]))
        target = g @ mean @ g.T
        worst_congruence = max(worst_congruence, np.abs(moved - target).max() / np.abs(target).max())
    elapsed = time.perf_counter() - t0
    ok = worst_closed <= 1e-8 and worst_congruence <= 1e-6 and elapsed < 30.0
    assert criterion(5, ok, f"closed-form error {worst_closed:.1e}, congruence error "
                            f"{worst_congruence:.1e} (relative, 100 pairs), {elapsed:.1f} s")


# --- 6. AUC oracle ----------------------------------------------------------------------------

def _pair_count_auc(scores, labels):
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def test_criterion_06_auc_oracle(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    mismatches = 0
    for i in range(1000):
        n = int(rng.integers(2, 51))
        labels = np.zeros(n, int)
        labels[rng.permutation(n)[: int(rng.integers(1, n))]] = 1
        # half the sets use coarse integer scores so ties are frequent
        scores = rng.integers(0, 5, n).astype(float) if i % 2 else rng.normal(size=n)
        mismatches += auc(scores, labels) != _pair_count_auc(scores, labels)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 10.0
    assert criterion(6, ok, f"{mismatches} mismatches in 1000 sets (exact equality), "
                            f"{elapsed:.1f} s")


# --- 7. filter masks --------------------------------------------------------------------------

def _response_db(sos_or_ba, freqs, rate, sos=True):
    if sos:
        _, h = sps.sosfreqz(sos_or_ba, worN=freqs, fs=rate)
    else:
        _, h = sps.freqz(*sos_or_ba, worN=freqs, fs=rate)
    return 20 * np.log10(np.maximum(np.abs(h), 1e-300))


def test_criterion_07_filter_masks(criterion):
    t0 = time.perf_counter()
    lows, highs, notches = [], [], []
    for rate in (200, 250, 256, 500):
        nyq = rate / 2
        low, _ = pp.design_butterworth(pp.LOWPASS, rate)
        stop = np.linspace(50.0, nyq * 0.999, 2000)
        lows.append(-_response_db(low, stop, rate).max())
        high, _ = pp.design_butterworth(pp.HIGHPASS, rate)
        passband = np.linspace(0.5, nyq * 0.999, 4000)
        highs.append(np.abs(_response_db(high, passband, rate)).max())
        for mains in (50.0, 60.0):
            b, a = sps.iirnotch(mains, pp.PreprocessConfig().notch_q, fs=rate)
            depth_tf = -_response_db((b, a), [mains], rate, sos=False)[0]
            # measured on a signal: steady-state amplitude of a mains tone
            t = np.arange(20 * rate) / rate
            y = pp.notch(np.sin(2 * np.pi * mains * t), mains, pp.PreprocessConfig().notch_q,
                         rate)[-10 * rate:]
            ref = np.sin(2 * np.pi * mains * t[-10 * rate:])
            depth_sig = -20 * np.log10(np.abs(y @ np.exp(-2j * np.pi * mains * t[-10 * rate:]))
                                       / np.abs(ref @ np.exp(-2j * np.pi * mains * t[-10 * rate:])))
            notches.append(min(depth_tf, depth_sig))
    elapsed = time.perf_counter() - t0
    ok = min(lows) >= 20 and max(highs) < 1 and min(notches) >= 30 and elapsed < 10.0
    assert criterion(7, ok, f"lowpass >= {min(lows):.1f} dB above 50 Hz, highpass deviation "
                            f"<= {max(highs):.3f} dB above 0.5 Hz, notch depth >= "
                            f"{min(notches):.1f} dB (4 rates, 50/60 Hz), {elapsed:.1f} s")


# --- 9. statistics oracle ---------------------------------------------------------------------

def _permutation_oracle(samples, n_perm, seed):
    """Permutation p-values of the H statistic and of every pairwise
    Conover-Iman |t|, re-ranking nothing: labels are permuted over fixed
    pooled midranks."""
    values = np.concatenate(samples)
    sizes = np.array([len(s) for s in samples])
    n, k = len(values), len(samples)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(n)
    sorted_vals = values[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1
        i = j + 1
    s2 = (np.sum(ranks ** 2) - n * (n + 1) ** 2 / 4) / (n - 1)
    groups = np.repeat(np.arange(k), sizes)
    iu = np.triu_indices(k, 1)

    def stats(labels):                       # labels: (m, n)
        sums = np.stack([(labels == g) @ ranks for g in range(k)], axis=1)
        means = sums / sizes
        h = (np.sum(sums ** 2 / sizes, axis=1) - n * (n + 1) ** 2 / 4) / s2
        pooled = s2 * (n - 1 - h) / (n - k)
        diff = np.abs(means[:, iu[0]] - means[:, iu[1]])
        t = diff / np.sqrt(pooled[:, None] * (1 / sizes[iu[0]] + 1 / sizes[iu[1]]))
        return h, t

    h_obs, t_obs = stats(groups[None])
    rng = np.random.default_rng(seed)
    h_hits, t_hits = 0, np.zeros(len(iu[0]))
    for start in range(0, n_perm, 5000):
        m = min(5000, n_perm - start)
        perm = groups[np.argsort(rng.random((m, n)), axis=1)]
        h, t = stats(perm)
        h_hits += np.sum(h >= h_obs[0] - 1e-9)
        t_hits += np.sum(t >= t_obs[0] - 1e-9, axis=0)
    return h_hits / n_perm, t_hits / n_perm


def _stat_cases():
    """Three pre-registered 3-group x 100 cases: null, graded shift, tied integers."""
    rng = np.random.default_rng(9)
    return {
        "null": [rng.normal(size=100) for _ in range(3)],
        "shift": [rng.normal(size=100), rng.normal(0.2, 1, 100), rng.normal(0.35, 1, 100)],
        "ties": [rng.integers(0, 6, 100).astype(float),
                 rng.integers(0, 6, 100).astype(float) + (rng.random(100) < 0.15),
                 rng.integers(0, 6, 100).astype(float)],
    }


def test_criterion_09_statistics_oracle(criterion):
    t0 = time.perf_counter()
    n_perm = 100_000
    worst_z = 0.0
    detail = []
    for name, samples in _stat_cases().items():
        p_kw = kruskal_wallis(samples).pvalue
        p_ci = conover_iman(samples)[np.triu_indices(3, 1)]
        o_kw, o_ci = _permutation_oracle(samples, n_perm, seed=1)
        for p, o in zip(np.r_[p_kw, p_ci], np.r_[o_kw, o_ci]):
            sigma = np.sqrt(max(o, 1 / n_perm) * (1 - o) / n_perm)
            worst_z = max(worst_z, abs(p - o) / sigma)
        detail.append(f"{name}: KW {p_kw:.4f} vs {o_kw:.4f}")
    # FDR against the hand-applied step-up formula
    rng = np.random.default_rng(10)
    fdr_exact = True
    for _ in range(200):
        p = rng.random(int(rng.integers(1, 30))) ** 2
        m = len(p)
        order = np.argsort(p)
        q_sorted = np.minimum(1.0, p[order] * m / np.arange(1, m + 1))
        q_sorted = np.minimum.accumulate(q_sorted[::-1])[::-1]
        hand = np.empty(m)
        hand[order] = q_sorted
        fdr_exact &= bool(np.array_equal(fdr_adjust(p), hand))
    fdr_exact &= np.array_equal(fdr_adjust([0.01, 0.02, 0.03, 0.04]), [0.04] * 4)
    elapsed = time.perf_counter() - t0
    ok = worst_z <= 3.0 and fdr_exact and elapsed < 120.0
    assert criterion(9, ok, f"max |asymptotic - permutation| = {worst_z:.2f} sigma "
                            f"({'; '.join(detail)}), FDR exact: {fdr_exact}, {elapsed:.1f} s")


# --- 8 and 10. end-to-end ordering and leakage audit -----------------------------------------

@pytest.fixture(scope="module")
def reference_cv(reference_dataset):
    ds, _ = reference_dataset
    folds = stratified_folds(ds.manifest, 6, seed=0)
    t0 = time.perf_counter()
    reports = cross_validate_suite(full_suite(desk_profile()), ds, folds, seed=0)
    return reports, folds, ds, time.perf_counter() - t0


def test_criterion_08_end_to_end_ordering(reference_cv, criterion):
    reports, _, _, elapsed = reference_cv
    means = {name: rep.mean() for name, rep in reports.items()}
    meta = means["META"]
    components = ("GBE", "MINetP", "TransNetP")
    meta_ok = all(meta >= means[c] - 0.01 for c in components)
    mil_ok = means["miNetP"] >= means["siNet"]
    ok = meta_ok and mil_ok and elapsed < 7200
    table = ", ".join(f"{k} {v:.3f}" for k, v in sorted(means.items(), key=lambda kv: -kv[1]))
    assert criterion(8, ok, f"mean test AUC: {table}; META >= components - 0.01: {meta_ok}; "
                            f"miNetP >= siNet: {mil_ok}; CV {elapsed / 60:.1f} min")


def test_criterion_10_leakage_audit(reference_cv, criterion):
    reports, folds, ds, _ = reference_cv
    bad = leakage_violations(ds.log, folds)
    fitted = {p.split(":", 1)[1] for _, p, _ in ds.log.entries if p.startswith("fit:")}
    ok = not bad and fitted == set(reports)
    assert criterion(10, ok, f"{len(ds.log.entries)} logged accesses, {len(bad)} test-fold "
                             f"reads during fitting/selection, audited kinds {sorted(fitted)}")
