"""Gradient-boosted trees (single member and 30-member ensemble) and a
random forest, trained from scratch on handcrafted feature vectors.

Trees are free-form, depth-limited and grown level by level. Split
search is vectorised over all nodes of a level: the candidate rows of
every (node, feature) pair are sorted once and scored from cumulative
statistics. Thresholds are always observed training values and rows go
left when ``x <= threshold``, so a fitted tree is unchanged by any
strictly increasing transform of a feature.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .evaluation.metrics import SingleClass, auc
from .features import N_FEATURES, RF_SLICE
from .seeding import derive_seed


class EmptyFeatures(ValueError):
    pass


class EmptyEnsemble(ValueError):
    pass


@dataclass(frozen=True)
class GbtConfig:
    iterations: int = 700
    learning_rate: float = 0.085195
    depth: int = 6
    l2_leaf_reg: float = 1.1030
    colsample_bylevel: float = 0.019947
    loss: str = "logistic"
    max_bins: int | None = 255   # None: exact splits on every distinct value
    min_gain: float = 1e-12

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.colsample_bylevel <= 1:
            raise ValueError("colsample_bylevel must be in (0, 1]")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.loss != "logistic":
            raise ValueError("only the logistic loss is supported")


@dataclass(frozen=True)
class RfConfig:
    n_trees: int = 1600
    split_criterion: str = "entropy"
    bootstrap: bool = False
    max_features: str | int = "sqrt"
    min_samples_leaf: int = 2
    min_samples_split: int = 2
    max_depth: int = 90

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.split_criterion != "entropy" or self.bootstrap:
            raise ValueError("only entropy splits without bootstrap are supported")

    def n_candidates(self, n_features: int) -> int:
        if self.max_features == "sqrt":
            return max(1, int(np.sqrt(n_features)))
        return max(1, min(int(self.max_features), n_features))


GBE_MEMBERS = 30


# --- tree storage and prediction ---------------------------------------------

@dataclass
class DecisionTree:
    """Node arrays; leaves have ``feature == -1``. Root is node 0."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def depth(self) -> int:
        d = np.zeros(len(self.feature), int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                d[self.left[i]] = d[self.right[i]] = d[i] + 1
        return int(d.max())

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d) -> "DecisionTree":
        return cls(np.asarray(d["feature"], int), np.asarray(d["threshold"], float),
                   np.asarray(d["left"], int), np.asarray(d["right"], int),
                   np.asarray(d["value"], float))


def _pack(trees):
    """Concatenate trees into flat arrays with absolute child indices."""
    sizes = np.array([len(t.feature) for t in trees])
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    feature = np.concatenate([t.feature for t in trees])
    shift = np.repeat(offsets, sizes)
    leaf = feature < 0
    left = np.where(leaf, -1, np.concatenate([t.left for t in trees]) + shift)
    right = np.where(leaf, -1, np.concatenate([t.right for t in trees]) + shift)
    threshold = np.concatenate([t.threshold for t in trees])
    value = np.concatenate([t.value for t in trees])
    return offsets, feature, threshold, left, right, value


def tree_outputs(trees, X) -> np.ndarray:
    """(n_trees, n_rows) leaf values, traversing all trees at once."""
    X = np.asarray(X, dtype=np.float64)
    if not trees:
        return np.zeros((0, len(X)))
    offsets, feature, threshold, left, right, value = _pack(trees)
    rows = np.arange(len(X))
    node = np.repeat(offsets[:, None], len(X), axis=1)
    while True:
        f = feature[node]
        inner = f >= 0
        if not inner.any():
            break
        goes_left = X[rows[None, :], np.maximum(f, 0)] <= threshold[node]
        node = np.where(inner, np.where(goes_left, left[node], right[node]), node)
    return value[node]


# --- vectorised level-wise split search ---------------------------------------

def _sorted_candidates(codes, rows, node_at, feats, n_codes):
    """Sort each node's rows by each of its candidate features.

    codes: (n_rows, n_features) integer value ranks; rows: live rows grouped
    by node (``node_at`` ascending); feats: (n_nodes, k). Returns (k, m)
    arrays of sorted rows, sorted codes and the feature id of each entry.
    """
    fidx = feats[node_at].T
    vals = codes[rows[None, :], fidx]
    key = node_at * n_codes + vals
    if key.size and key.max() < 1 << 16:
        order = np.argsort(key.astype(np.uint16), axis=-1, kind="stable")
    else:
        order = np.argsort(key, axis=-1)
    srows = rows[order]
    svals = np.take_along_axis(vals, order, 1)
    return srows, svals, fidx


def _presorted_candidates(presorted, rpos, n_live, n_nodes, feats):
    """Fast path when all nodes of a level share one feature subset: rows
    are pre-sorted by code per feature, so grouping by node is a stable
    one-byte sort."""
    orders, sorted_codes = presorted
    f = feats[0]
    lab = np.where(rpos >= 0, rpos, n_nodes).astype(np.uint8)
    order = orders[f]
    perm = np.argsort(lab[order], axis=-1, kind="stable")[:, :n_live]
    srows = np.take_along_axis(order, perm, 1)
    svals = np.take_along_axis(sorted_codes[f], perm, 1)
    return srows, svals, np.broadcast_to(f[:, None], srows.shape)


def presort(codes):
    """Per-feature row order by code and the codes in that order, (p, n)."""
    codes_t = np.ascontiguousarray(codes.T)
    orders = np.argsort(codes_t, axis=1, kind="stable")
    return orders, np.take_along_axis(codes_t, orders, 1)


def _segment_argmax(gain, starts, counts):
    """Best (feature slot, position, gain) per node; gain is (k, m) with
    columns grouped by node."""
    slot = gain.argmax(axis=0)
    col_best = gain[slot, np.arange(gain.shape[1])]
    node_at = np.repeat(np.arange(len(counts)), counts)
    order = np.lexsort((-col_best, node_at))
    n_nodes = len(counts)
    pos = np.full(n_nodes, -1)
    best = np.full(n_nodes, -np.inf)
    nz = counts > 0
    first = order[starts[:-1][nz]]
    pos[nz] = first
    best[nz] = col_best[first]
    return slot[np.maximum(pos, 0)], pos, best


def _cumulative_left(stat_sorted, starts, node_at):
    """Left-child sums for a split after each sorted position."""
    cum = np.cumsum(stat_sorted, axis=-1)
    base = np.concatenate([np.zeros(stat_sorted.shape[:-1] + (1,)), cum], axis=-1)
    return cum - base[..., starts[node_at]]


def _valid_positions(svals, node_at):
    valid = np.zeros(svals.shape, bool)
    valid[:, :-1] = (svals[:, :-1] != svals[:, 1:]) & (node_at[:-1] == node_at[1:])
    return valid


def _sample_features(rng, n_nodes, n_features, k):
    if k >= n_features:
        return np.tile(np.arange(n_features), (n_nodes, 1))
    return np.argpartition(rng.random((n_nodes, n_features)), k - 1, axis=1)[:, :k]


class _Builder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right = [-1], [np.nan], [-1], [-1]

    def split(self, node, feature, threshold):
        a = len(self.feature)
        self.feature[node], self.threshold[node] = int(feature), float(threshold)
        self.left[node], self.right[node] = a, a + 1
        self.feature += [-1, -1]
        self.threshold += [np.nan, np.nan]
        self.left += [-1, -1]
        self.right += [-1, -1]
        return a, a + 1

    def tree(self, value):
        return DecisionTree(np.array(self.feature), np.array(self.threshold),
                            np.array(self.left), np.array(self.right), np.asarray(value, float))


def _grow(codes, n_codes, stats, score_fn, can_split, max_depth, sample, thresholds,
          presorted=None):
    """Generic level-wise growth.

    stats: (s, n) per-row statistics summed into children; score_fn(left,
    total) -> gain for each candidate; can_split(total) -> bool per node;
    sample(n_nodes) -> (n_nodes, k) candidate features; thresholds(feature,
    code) -> split threshold (the observed value of that code). With
    ``presorted`` (see ``presort``) every level must use a single feature
    subset. Returns the builder and the leaf of each row.
    """
    n = codes.shape[0]
    b = _Builder()
    row_node = np.zeros(n, int)
    active = np.array([0])
    for _ in range(max_depth):
        if len(active) == 0:
            break
        lookup = np.full(len(b.feature), -1)
        lookup[active] = np.arange(len(active))
        rpos = lookup[row_node]
        live = np.flatnonzero(rpos >= 0)
        live = live[np.argsort(rpos[live], kind="stable")]
        node_at = rpos[live]
        counts = np.bincount(node_at, minlength=len(active))
        starts = np.concatenate([[0], np.cumsum(counts)])
        totals = np.stack([np.bincount(node_at, s[live], len(active)) for s in stats])
        splittable = can_split(totals)
        feats = sample(len(active))
        if presorted is not None and len(active) < 255:
            srows, svals, fidx = _presorted_candidates(presorted, rpos, len(live),
                                                       len(active), feats)
        else:
            srows, svals, fidx = _sorted_candidates(codes, live, node_at, feats, n_codes)
        left = np.stack([_cumulative_left(s[srows], starts, node_at) for s in stats])
        gain = score_fn(left, totals[:, node_at][:, None, :])
        valid = _valid_positions(svals, node_at) & splittable[node_at][None, :]
        gain = np.where(valid & np.isfinite(gain), gain, -np.inf)
        slot, pos, best = _segment_argmax(gain, starts, counts)
        next_active = []
        for i, node in enumerate(active):
            if not np.isfinite(best[i]):
                continue
            p, j = pos[i], slot[i]
            f = fidx[j, p]
            lid, rid = b.split(node, f, thresholds(f, svals[j, p]))
            seg = srows[j, starts[i]:starts[i + 1]]
            cut = p - starts[i] + 1
            row_node[seg[:cut]] = lid
            row_node[seg[cut:]] = rid
            next_active += [lid, rid]
        active = np.array(next_active, int)
    return b, row_node


# --- gradient boosting ----------------------------------------------------------

def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise EmptyFeatures("feature matrix must be non-empty and 2-D")
    if len(y) != len(X):
        raise ValueError("labels and rows differ in length")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain non-finite values")
    return X, y.astype(int)


def quantize(X, max_bins: int | None = 255):
    """Per-feature edges (observed values) and bin codes with
    ``code <= b  <=>  x <= edges[b]``. Edges are order statistics, at most
    ``max_bins - 1`` per feature; ``max_bins=None`` keeps every distinct
    value (exact mode, codes are dense ranks)."""
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    S = np.sort(X, axis=0)
    if max_bins is not None and n > max_bins:
        q = np.arange(1, max_bins) / max_bins
        cand = S[np.floor(q * (n - 1)).astype(int)]
    else:
        cand = S
    codes = np.empty(X.shape, np.int32)
    edges = []
    for j in range(X.shape[1]):
        e = np.unique(cand[:, j])
        e = e[e < S[-1, j]]
        edges.append(e)
        codes[:, j] = np.searchsorted(e, X[:, j], side="left")
    return edges, codes


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def logloss(y, logit) -> float:
    return float(np.mean(np.logaddexp(0.0, logit) - y * logit))


@dataclass
class GbtModel:
    base_score: float
    trees: list
    n_used: int
    config: GbtConfig = field(default_factory=GbtConfig)
    n_features: int = N_FEATURES
    seed: int = 0
    train_loss: list = field(default_factory=list)
    val_auc: list = field(default_factory=list)

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = tree_outputs(self.trees[:self.n_used], X)
        return self.base_score + out.sum(axis=0)

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision_function(X))

    def to_dict(self) -> dict:
        return {"type": "gbt", "config": asdict(self.config), "base_score": self.base_score,
                "n_used": self.n_used, "n_features": self.n_features, "seed": self.seed,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d) -> "GbtModel":
        return cls(d["base_score"], [DecisionTree.from_dict(t) for t in d["trees"]],
                   d["n_used"], GbtConfig(**d["config"]), d["n_features"], d["seed"])


def train_gbt(X, y, config: GbtConfig = GbtConfig(), validation=None, seed: int = 0,
              quantized=None) -> GbtModel:
    """Stagewise logistic boosting; keeps the validation-AUC-optimal prefix
    (ties broken by validation log-loss).

    ``validation`` is an optional (X_val, y_val) pair; without it all
    ``config.iterations`` trees are used. ``quantized`` optionally supplies
    the (edges, codes) of ``X`` so ensemble members can share them.
    """
    X, y = _check_xy(X, y)
    if len(np.unique(y)) < 2:
        raise SingleClass("boosting needs both classes in the training labels")
    rng = np.random.default_rng(seed)
    if quantized is None:
        edges, codes = quantize(X, config.max_bins)
        quantized = (edges, codes, presort(codes))
    edges, codes, presorted = quantized
    n_codes = max(len(e) for e in edges) + 1
    p = X.shape[1]
    k = max(1, int(round(config.colsample_bylevel * p)))
    lam, lr = config.l2_leaf_reg, config.learning_rate
    prior = y.mean()
    base = float(np.log(prior / (1 - prior)))
    logit = np.full(len(y), base)
    if validation is not None:
        Xv, yv = np.asarray(validation[0], float), np.asarray(validation[1], int)
        vlogit = np.full(len(yv), base)
    trees, losses, vaucs, vlosses = [], [logloss(y, logit)], [], []

    def score(left, total):
        gl, hl = left
        gt, ht = total
        gr, hr = gt - gl, ht - hl
        gain = gl ** 2 / (hl + lam) + gr ** 2 / (hr + lam) - gt ** 2 / (ht + lam)
        return np.where(gain > config.min_gain, gain, -np.inf)

    def sample(n_nodes):
        # one feature subset per level, shared by all its nodes
        return np.tile(_sample_features(rng, 1, p, k), (n_nodes, 1))

    for _ in range(config.iterations):
        prob = _sigmoid(logit)
        grad, hess = prob - y, prob * (1 - prob)
        builder, leaf = _grow(codes, n_codes, np.stack([grad, hess]), score,
                              lambda totals: totals[1] > 0, config.depth, sample,
                              lambda f, c: edges[f][c], presorted)
        n_nodes = len(builder.feature)
        g = np.bincount(leaf, grad, n_nodes)
        h = np.bincount(leaf, hess, n_nodes)
        value = np.where(np.array(builder.feature) < 0, -lr * g / (h + lam), 0.0)
        tree = builder.tree(value)
        trees.append(tree)
        logit = logit + value[leaf]
        losses.append(logloss(y, logit))
        if validation is not None:
            vlogit = vlogit + tree_outputs([tree], Xv)[0]
            vaucs.append(auc(vlogit, yv))
            vlosses.append(logloss(yv, vlogit))
    n_used = len(trees)
    if validation is not None and trees:
        # best validation AUC; ties (common on small, easy folds) go to the
        # prefix with the lowest validation log-loss
        n_used = int(np.lexsort((vlosses, -np.asarray(vaucs)))[0]) + 1
    return GbtModel(base, trees, n_used, config, p, seed, losses, vaucs)


@dataclass
class GbeModel:
    members: list

    def predict_proba(self, X) -> np.ndarray:
        return gbe_predict(self.members, X)

    def to_dict(self) -> dict:
        return {"type": "gbe", "members": [m.to_dict() for m in self.members]}

    @classmethod
    def from_dict(cls, d) -> "GbeModel":
        return cls([GbtModel.from_dict(m) for m in d["members"]])


def train_gbe(X, y, config: GbtConfig = GbtConfig(), validation=None, seed: int = 0,
              n_members: int = GBE_MEMBERS) -> GbeModel:
    """Members differ only by seed (member index mixed into ``seed``)."""
    X, y = _check_xy(X, y)
    edges, codes = quantize(X, config.max_bins)
    quantized = (edges, codes, presort(codes))
    return GbeModel([train_gbt(X, y, config, validation, derive_seed(seed, "gbe", i), quantized)
                     for i in range(n_members)])


def gbe_predict(models, X) -> np.ndarray:
    """Arithmetic mean of member normality probabilities."""
    if not models:
        raise EmptyEnsemble("ensemble has no members")
    return np.mean([m.predict_proba(X) for m in models], axis=0)


# --- random forest --------------------------------------------------------------

def _entropy_weighted(c1, n):
    """n * H(c1 / n) in bits, 0 for empty or pure sets."""
    with np.errstate(divide="ignore", invalid="ignore"):
        p = c1 / n
        h = -(np.where(p > 0, p * np.log2(p), 0.0) + np.where(p < 1, (1 - p) * np.log2(1 - p), 0.0))
    return np.where(n > 0, n * h, 0.0)


@dataclass
class RandomForest:
    trees: list
    config: RfConfig = field(default_factory=RfConfig)
    feature_slice: tuple = (RF_SLICE.start, RF_SLICE.stop)
    seed: int = 0

    def _select(self, X):
        X = np.asarray(X, dtype=np.float64)
        a, b = self.feature_slice
        return X[:, a:b] if X.shape[1] == N_FEATURES and (a, b) != (0, N_FEATURES) else X

    def predict_proba(self, X) -> np.ndarray:
        return tree_outputs(self.trees, self._select(X)).mean(axis=0)

    def to_dict(self) -> dict:
        return {"type": "rf", "config": asdict(self.config), "seed": self.seed,
                "feature_slice": list(self.feature_slice),
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d) -> "RandomForest":
        return cls([DecisionTree.from_dict(t) for t in d["trees"]], RfConfig(**d["config"]),
                   tuple(d["feature_slice"]), d["seed"])


def train_tree_entropy(X, y, config: RfConfig, rng, quantized=None) -> DecisionTree:
    edges, codes = quantized if quantized is not None else quantize(X, None)
    n_codes = max(len(e) for e in edges) + 1
    n, p = X.shape
    k = config.n_candidates(p)
    ones = y.astype(float)
    leaf_min = config.min_samples_leaf

    def score(left, total):
        c1l, nl = left
        c1t, nt = total
        nr = nt - nl
        gain = _entropy_weighted(c1t, nt) - _entropy_weighted(c1l, nl) - _entropy_weighted(c1t - c1l, nr)
        return np.where((nl >= leaf_min) & (nr >= leaf_min), gain, -np.inf)

    def can_split(totals):
        c1, cnt = totals
        return (cnt >= max(config.min_samples_split, 2 * leaf_min)) & (c1 > 0) & (c1 < cnt)

    builder, leaf = _grow(codes, n_codes, np.stack([ones, np.ones(n)]), score, can_split,
                          config.max_depth, lambda m: _sample_features(rng, m, p, k),
                          lambda f, c: edges[f][c])
    n_nodes = len(builder.feature)
    c1 = np.bincount(leaf, ones, n_nodes)
    cnt = np.bincount(leaf, minlength=n_nodes)
    value = np.where(cnt > 0, c1 / np.maximum(cnt, 1), 0.0)
    return builder.tree(value)


def train_rf(X, y, config: RfConfig = RfConfig(), seed: int = 0,
             feature_slice: slice = RF_SLICE) -> RandomForest:
    """Unbagged entropy forest. Full 2,850-column matrices are restricted to
    the power + coherence block; narrower matrices are used as given."""
    X, y = _check_xy(X, y)
    sl = (feature_slice.start, feature_slice.stop) if X.shape[1] == N_FEATURES else (0, X.shape[1])
    Xs = X[:, sl[0]:sl[1]]
    quantized = quantize(Xs, None)
    trees = [train_tree_entropy(Xs, y, config, np.random.default_rng(derive_seed(seed, "rf", i)),
                                quantized) for i in range(config.n_trees)]
    return RandomForest(trees, config, sl, seed)


# --- serialization --------------------------------------------------------------

def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_model(path):
    d = json.loads(Path(path).read_text())
    return {"gbt": GbtModel, "gbe": GbeModel, "rf": RandomForest}[d["type"]].from_dict(d)
