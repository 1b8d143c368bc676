"""Rank-based comparison of cross-validation score samples.

Kruskal-Wallis omnibus test, Conover-Iman post-hoc pairwise test, and
Benjamini-Hochberg false-discovery-rate adjustment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from .distributions import chi2_sf, t_two_sided
from .metrics import rankdata


class OutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class KruskalResult:
    statistic: float
    pvalue: float
    all_equal: bool = False


def _prepare(samples):
    groups = [np.asarray(g, dtype=np.float64).ravel() for g in samples]
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    if any(len(g) == 0 for g in groups):
        raise ValueError("every group must be non-empty")
    return groups


def _tie_correction(ranks) -> float:
    _, counts = np.unique(ranks, return_counts=True)
    n = len(ranks)
    return 1.0 - np.sum(counts ** 3 - counts) / (n ** 3 - n)


def _h_statistic(rank_sums, sizes, n, correction):
    h = 12.0 / (n * (n + 1)) * np.sum(rank_sums ** 2 / sizes, axis=-1) - 3.0 * (n + 1)
    return h / correction


def kruskal_wallis(samples, method: str = "asymptotic", n_resamples: int = 100_000,
                   seed=None) -> KruskalResult:
    """Kruskal-Wallis H test with tie correction.

    ``method="asymptotic"`` uses the chi-square approximation with
    k - 1 degrees of freedom; ``"permutation"`` resamples group labels,
    which is preferable for very small groups. If every value is equal,
    H is undefined and (0, 1) is returned with ``all_equal`` set.
    """
    groups = _prepare(samples)
    sizes = np.array([len(g) for g in groups], dtype=np.float64)
    values = np.concatenate(groups)
    n = len(values)
    ranks = rankdata(values)
    correction = _tie_correction(ranks)
    if correction <= 0:
        return KruskalResult(0.0, 1.0, all_equal=True)
    bounds = np.r_[0, np.cumsum(sizes).astype(int)]
    rank_sums = np.array([ranks[a:b].sum() for a, b in zip(bounds[:-1], bounds[1:])])
    h = float(_h_statistic(rank_sums, sizes, n, correction))
    if method == "asymptotic":
        p = float(chi2_sf(h, len(groups) - 1))
    elif method == "permutation":
        rng = np.random.default_rng(seed)
        exceed = 0
        for start in range(0, n_resamples, 10_000):
            m = min(10_000, n_resamples - start)
            perm = ranks[np.argsort(rng.random((m, n)), axis=1)]
            sums = np.stack([perm[:, a:b].sum(axis=1) for a, b in zip(bounds[:-1], bounds[1:])], axis=1)
            exceed += int(np.sum(_h_statistic(sums, sizes, n, correction) >= h - 1e-9))
        p = (exceed + 1) / (n_resamples + 1)
    else:
        raise ValueError(f"unknown method {method!r}")
    return KruskalResult(h, min(p, 1.0))


def conover_iman(samples, h: float | None = None) -> np.ndarray:
    """Pairwise Conover-Iman p-values (symmetric, unit diagonal).

    Uses rank means and the pooled rank variance adjusted for the
    Kruskal-Wallis statistic; two-sided t tail with N - k degrees of freedom.
    """
    groups = _prepare(samples)
    k = len(groups)
    sizes = np.array([len(g) for g in groups], dtype=np.float64)
    values = np.concatenate(groups)
    n = len(values)
    ranks = rankdata(values)
    if h is None:
        h = kruskal_wallis(groups).statistic
    bounds = np.r_[0, np.cumsum(sizes).astype(int)]
    mean_ranks = np.array([ranks[a:b].mean() for a, b in zip(bounds[:-1], bounds[1:])])
    s2 = (np.sum(ranks ** 2) - n * (n + 1) ** 2 / 4.0) / (n - 1)
    out = np.ones((k, k))
    if s2 <= 0 or n == k:
        return out
    pooled = s2 * (n - 1 - h) / (n - k)
    for i in range(k):
        for j in range(i + 1, k):
            diff = abs(mean_ranks[i] - mean_ranks[j])
            se = np.sqrt(max(pooled, 0.0) * (1.0 / sizes[i] + 1.0 / sizes[j]))
            if se == 0:
                p = 1.0 if diff == 0 else 0.0
            else:
                p = float(t_two_sided(diff / se, n - k))
            out[i, j] = out[j, i] = p
    return out


def fdr_adjust(pvalues) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, in input order."""
    p = np.asarray(pvalues, dtype=np.float64)
    shape = p.shape
    p = p.ravel()
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise OutOfRange("p-values must lie in [0, 1]")
    m = len(p)
    if m == 0:
        return p.reshape(shape)
    order = np.argsort(p, kind="mergesort")
    scaled = p[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(adjusted, 1.0)
    return out.reshape(shape)


def adjusted_pairwise(samples):
    """Conover-Iman matrix with FDR applied to the upper-triangle p-values."""
    mat = conover_iman(samples)
    iu = np.triu_indices(len(mat), k=1)
    adj = mat.copy()
    adj[iu] = fdr_adjust(mat[iu])
    adj[(iu[1], iu[0])] = adj[iu]
    return adj
