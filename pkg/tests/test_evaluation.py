import json

import numpy as np
import pytest
import scipy.special
import scipy.stats
from hypothesis import given, settings, strategies as st

from eegpath.evaluation import (CvReport, Dataset, ModelSpec, SingleClass, acc, auc,
                                conover_iman, cross_validate, cross_validate_suite,
                                fdr_adjust, fit_power_law, kruskal_wallis,
                                leakage_violations, n_db, stratified_folds)
from eegpath.evaluation import distributions, scaling
from eegpath.evaluation.stats import OutOfRange


def brute_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return total / (len(pos) * len(neg))


# --- metrics -----------------------------------------------------------------

def test_auc_worked_example():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auc_extremes():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_auc_single_class():
    with pytest.raises(SingleClass):
        auc([0.1, 0.2], [1, 1])


def test_auc_matches_pair_counting_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = rng.integers(2, 40)
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        scores = rng.integers(0, 6, n) / 5.0
        assert auc(scores, labels) == brute_auc(scores, labels)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=4, max_size=40, unique=True),
       st.integers(0, 2 ** 32 - 1))
def test_auc_complement_and_monotone_invariance(scores, seed):
    labels = np.random.default_rng(seed).integers(0, 2, len(scores))
    labels[:2] = [0, 1]
    scores = np.array(scores)
    np.testing.assert_allclose(auc(scores, labels) + auc(scores, 1 - labels), 1.0, atol=1e-12)
    assert auc(np.arctan(scores / 100), labels) == pytest.approx(auc(scores, labels), abs=1e-12)


def test_acc_boundary_and_monte_carlo():
    assert acc([0.5, 0.49], [1, 0]) == 1.0
    assert acc([1.0, 0.0, 1.0], [1, 0, 1]) == 1.0
    rng = np.random.default_rng(1)
    labels = np.repeat([0, 1], 5000)
    assert abs(acc(rng.random(10_000), labels) - 0.5) < 0.02


# --- tail probabilities ------------------------------------------------------

@pytest.mark.parametrize("df", [1, 2, 5, 10, 65])
def test_chi2_tail_matches_scipy(df):
    x = np.concatenate([np.linspace(0, 3 * df + 20, 200), [1e-6, 0.5]])
    np.testing.assert_allclose(distributions.chi2_sf(x, df), scipy.special.chdtrc(df, x),
                               atol=1e-13, rtol=1e-11)


@pytest.mark.parametrize("df", [1, 3, 15, 57, 200])
def test_t_tail_matches_scipy(df):
    t = np.linspace(0, 12, 150)
    np.testing.assert_allclose(distributions.t_two_sided(t, df),
                               2 * scipy.special.stdtr(df, -t), atol=1e-13, rtol=1e-10)


# --- rank statistics ---------------------------------------------------------

def test_kruskal_hand_computed():
    # ranks 1..6; R1 = 6, R2 = 15; H = 12/42 * (36/3 + 225/3) - 21
    res = kruskal_wallis([[1, 2, 3], [4, 5, 6]])
    assert res.statistic == pytest.approx(12 / 42 * (12 + 75) - 21, abs=1e-12)
    assert res.statistic == pytest.approx(3.857142857, abs=1e-8)


def test_kruskal_identical_groups_and_all_equal():
    res = kruskal_wallis([[1, 2, 3], [1, 2, 3]])
    assert res.statistic == pytest.approx(0.0, abs=1e-12) and res.pvalue == pytest.approx(1.0)
    flat = kruskal_wallis([[2.0, 2.0], [2.0, 2.0, 2.0]])
    assert flat.all_equal and flat.statistic == 0.0 and flat.pvalue == 1.0


def test_kruskal_matches_scipy_with_ties():
    rng = np.random.default_rng(3)
    groups = [rng.integers(0, 8, n).astype(float) for n in (7, 9, 11)]
    ours = kruskal_wallis(groups)
    ref = scipy.stats.kruskal(*groups)
    assert ours.statistic == pytest.approx(ref.statistic, rel=1e-12)
    assert ours.pvalue == pytest.approx(ref.pvalue, rel=1e-10)


def test_kruskal_monotone_invariance():
    rng = np.random.default_rng(4)
    groups = [rng.normal(i, 1, 8) for i in range(3)]
    a = kruskal_wallis(groups)
    b = kruskal_wallis([np.exp(g) for g in groups])
    assert a.statistic == pytest.approx(b.statistic, abs=1e-12)


def test_kruskal_needs_two_nonempty_groups():
    with pytest.raises(ValueError):
        kruskal_wallis([[1, 2]])
    with pytest.raises(ValueError):
        kruskal_wallis([[1, 2], []])


def test_conover_structure():
    rng = np.random.default_rng(5)
    g = rng.normal(0, 1, 10)
    mat = conover_iman([g, g.copy(), rng.normal(3, 1, 10)])
    np.testing.assert_array_equal(np.diag(mat), 1.0)
    np.testing.assert_array_equal(mat, mat.T)
    assert mat[0, 1] == pytest.approx(1.0)
    assert mat[0, 2] < 1e-4


def test_conover_hand_formula():
    groups = [[1.0, 2.0, 4.0], [3.0, 5.0, 6.0], [7.0, 8.0, 9.0]]
    # ranks equal values; rank means 7/3, 14/3, 8; N = 9, k = 3
    n, k = 9, 3
    h = 12 / (n * (n + 1)) * (7 ** 2 + 14 ** 2 + 24 ** 2) / 3 - 3 * (n + 1)
    s2 = n * (n + 1) / 12
    se = np.sqrt(s2 * (n - 1 - h) / (n - k) * (2 / 3))
    t = (8 - 7 / 3) / se
    expected = 2 * scipy.stats.t.sf(t, n - k)
    assert conover_iman(groups)[0, 2] == pytest.approx(expected, rel=1e-10)


def test_fdr_hand_examples():
    np.testing.assert_array_equal(fdr_adjust([0.01, 0.02, 0.03, 0.04]), [0.04] * 4)
    assert fdr_adjust([0.3]).tolist() == [0.3]
    # unsorted input: q = [0.03, 0.06, 0.045, 0.4] in input order
    np.testing.assert_allclose(fdr_adjust([0.03, 0.4, 0.01, 0.02]), [0.04, 0.4, 0.04, 0.04])
    with pytest.raises(OutOfRange):
        fdr_adjust([0.5, 1.2])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_fdr_bounds_and_monotone(p):
    p = np.array(p)
    q = fdr_adjust(p)
    assert np.all(q >= p - 1e-15) and np.all(q <= 1.0)
    order = np.argsort(p, kind="mergesort")
    assert np.all(np.diff(q[order]) >= -1e-15)


def test_kruskal_permutation_mode_small_groups():
    rng = np.random.default_rng(6)
    groups = [rng.normal(m, 1, 6) for m in (0, 0.5, 1.0)]
    exact = kruskal_wallis(groups, method="permutation", n_resamples=50_000, seed=1).pvalue
    asym = kruskal_wallis(groups).pvalue
    assert 0 < exact <= 1 and abs(exact - asym) < 0.05


# --- power law ---------------------------------------------------------------

N5 = np.array([3000.0, 6000.0, 12000.0, 24000.0, 56000.0])


def test_power_law_noiseless_recovery():
    fit = fit_power_law(N5, 90 - 50 * N5 ** -0.5)
    np.testing.assert_allclose([fit.asymptote, fit.alpha, fit.beta], [90, 50, 0.5], rtol=1e-6)
    assert abs(fit.r_squared - 1.0) < 1e-9
    assert fit.converged


def test_power_law_too_few_points():
    with pytest.raises(scaling.TooFewPoints):
        fit_power_law([1, 2, 3, 3], [1, 2, 3, 3])


def test_n_db_closed_form():
    fit = scaling.PowerLawFit(90.0, 50.0, 0.5, np.eye(3), 1.0)
    assert n_db(fit, 1.0) == pytest.approx(2500.0)
    lin = scaling.PowerLawFit(90.0, 50.0, 1.0, np.eye(3), 1.0)
    assert n_db(lin, 2.0) == pytest.approx(n_db(lin, 1.0) / 2)
    bad = scaling.PowerLawFit(90.0, 50.0, 1.0, np.eye(3), 1.0, converged=False)
    with pytest.raises(scaling.NoConvergence):
        n_db(bad, 1.0)


def test_power_law_on_published_means():
    ref = scaling.published_scaling_reference()
    for model in ("META", "GBE"):
        n, y, _ = scaling.elm_series(model)
        fit = fit_power_law(n, y)
        assert abs(fit.asymptote - ref[model]["auc_asymptote"]) <= 1.5
        assert abs(fit.predict(n[-1]) - y[-1]) <= 2 * fit.predict_se(n[-1:])[0] + 1e-9
        assert np.all(np.diff(fit.predict(np.geomspace(1e3, 1e7, 50))) >= 0)
    n, y, _ = scaling.elm_series("META")
    fit = fit_power_law(n, y)
    assert ref["META"]["auc_n_db_thousands"] * 1e3 / 3 <= fit.n_db <= 3 * ref["META"]["auc_n_db_thousands"] * 1e3


def test_power_law_weighted_and_curve_points():
    n, y, se = scaling.elm_series("GBE")
    fit = fit_power_law(n, y, sigma=se)
    pts = scaling.curve_points(fit, [1e3, 1e5])
    assert pts.shape == (2, 3) and np.all(pts[:, 2] >= 0)


# --- folds and cross-validation ---------------------------------------------

def _manifest(n=600, seed=0):
    rng = np.random.default_rng(seed)
    return [{"recording_id": f"r{i:04d}", "label": int(i % 2), "sex": "FM"[(i // 2) % 2],
             "hospital_id": f"h{(i // 4) % 3}"} for i in rng.permutation(n)]


def test_folds_balanced_and_deterministic():
    man = _manifest()
    fa = stratified_folds(man, 6, seed=3)
    assert fa.sizes() == [100] * 6
    assert fa.folds == stratified_folds(list(reversed(man)), 6, seed=3).folds
    assert fa.folds != stratified_folds(man, 6, seed=4).folds


def test_folds_small_stratum_round_robin():
    man = [{"recording_id": f"x{i}", "label": 1, "sex": "F"} for i in range(7)]
    counts = sorted(stratified_folds(man, 6, 0).sizes(), reverse=True)
    assert counts == [2, 1, 1, 1, 1, 1]


@settings(max_examples=20, deadline=None)
@given(st.integers(12, 200), st.integers(0, 1000))
def test_folds_balance_property(n, seed):
    rng = np.random.default_rng(seed)
    man = [{"recording_id": str(i), "label": int(rng.integers(0, 2)), "sex": "FM"[rng.integers(0, 2)],
            "hospital_id": str(rng.integers(0, 3))} for i in range(n)]
    fa = stratified_folds(man, 6, seed)
    sizes = fa.sizes()
    assert max(sizes) - min(sizes) <= 1
    for key in {(r["label"], r["sex"], r["hospital_id"]) for r in man}:
        ids = [r["recording_id"] for r in man if (r["label"], r["sex"], r["hospital_id"]) == key]
        per = np.bincount([fa.folds[i] for i in ids], minlength=6)
        assert per.max() - per.min() <= 1


def test_step_partition():
    fa = stratified_folds(_manifest(60), 6, 0)
    for i in range(6):
        tr, va, te = fa.step(i)
        assert not (set(tr) & set(va)) and not (set(tr) & set(te)) and not (set(va) & set(te))
        assert len(tr) + len(va) + len(te) == 60
        assert {fa.folds[r] for r in te} == {i} and {fa.folds[r] for r in va} == {(i + 1) % 6}


class _Constant:
    selection = None

    def predict(self, view):
        return np.full(len(view), 0.7)


class ConstantSpec(ModelSpec):
    name = "const"

    def fit(self, train, validation, context, seed):
        for _ in train:
            pass
        return _Constant()


class PeekingSpec(ModelSpec):
    """Deliberately leaks: reads test rows through the parent dataset."""
    name = "peek"

    def __init__(self, dataset, folds):
        self.dataset, self.folds = dataset, folds

    def fit(self, train, validation, context, seed):
        _, _, test = self.folds.step(context["step"])
        self.dataset.view(test)[0]
        return _Constant()


def _dataset(n=60):
    man = _manifest(n)
    return Dataset(man, {r["recording_id"]: r["label"] for r in man}, "toy")


def test_constant_model_cv_report(tmp_path):
    ds = _dataset()
    fa = stratified_folds(ds.manifest, 6, 0)
    rep = cross_validate(ConstantSpec(), ds, fa)
    assert len(rep.steps) == 6
    assert all(s.test_auc == 0.5 for s in rep.steps)
    assert rep.sd() == 0.0 and rep.se() == 0.0
    rep.write(tmp_path / "r.json")
    again = CvReport.read(tmp_path / "r.json")
    assert again.to_dict() == rep.to_dict()
    assert json.loads((tmp_path / "r.json").read_text())["auc"]["mean"] == 0.5
    assert leakage_violations(ds.log, fa) == []


def test_leakage_audit_catches_peeking():
    ds = _dataset()
    fa = stratified_folds(ds.manifest, 6, 0)
    cross_validate_suite([ConstantSpec(), PeekingSpec(ds, fa)], ds, fa)
    bad = leakage_violations(ds.log, fa)
    assert len(bad) == 6 and all(phase == "fit:peek" for _, phase, _ in bad)
