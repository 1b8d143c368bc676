"""Logistic-regression blend of component normality probabilities.

The objective is ``sum_i logloss_i + ||w||^2 / (2 C)``; the bias is not
penalised, so as C -> 0 the prediction tends to the class prior. It is
minimised by damped Newton iterations.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .evaluation.metrics import SingleClass

COMPONENTS = ("GBE", "MINetP", "TransNetP")


class NonFiniteInput(ValueError):
    pass


@dataclass(frozen=True)
class MetaConfig:
    C: float = 7.9059
    max_iterations: int = 4000
    tol: float = 1e-8
    components: tuple = COMPONENTS

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be positive")
        if len(self.components) != 3:
            raise ValueError("the meta-model blends exactly 3 components")


@dataclass
class MetaModel:
    weights: np.ndarray
    bias: float
    config: MetaConfig = field(default_factory=MetaConfig)
    n_iterations: int = 0
    converged: bool = True

    def predict_proba(self, probs) -> np.ndarray:
        return meta_predict(self.weights, self.bias, probs)

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["components"] = list(cfg["components"])
        return {"weights": [float(w) for w in self.weights], "bias": float(self.bias),
                "components": list(self.config.components), "config": cfg,
                "n_iterations": self.n_iterations, "converged": self.converged}

    @classmethod
    def from_dict(cls, d) -> "MetaModel":
        cfg = dict(d["config"])
        cfg["components"] = tuple(cfg["components"])
        return cls(np.asarray(d["weights"], float), float(d["bias"]), MetaConfig(**cfg),
                   d.get("n_iterations", 0), d.get("converged", True))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "MetaModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _objective(theta, A, y, reg):
    z = A @ theta
    return float(np.sum(np.logaddexp(0.0, z) - y * z) + 0.5 * np.sum(reg * theta ** 2))


def fit_logistic(X, y, C: float, max_iterations: int = 4000, tol: float = 1e-8):
    """L2 logistic regression by Newton's method with backtracking.

    Returns (weights, bias, n_iterations, converged); convergence means the
    gradient's max-norm fell below ``tol``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    A = np.hstack([X, np.ones((len(X), 1))])
    reg = np.r_[np.full(X.shape[1], 1.0 / C), 0.0]
    theta = np.zeros(A.shape[1])
    prior = np.clip(y.mean(), 1e-12, 1 - 1e-12)
    theta[-1] = np.log(prior / (1 - prior))
    f = _objective(theta, A, y, reg)
    for it in range(1, max_iterations + 1):
        p = _sigmoid(A @ theta)
        grad = A.T @ (p - y) + reg * theta
        if np.max(np.abs(grad)) < tol:
            return theta[:-1], float(theta[-1]), it - 1, True
        hess = (A * (p * (1 - p))[:, None]).T @ A + np.diag(reg)
        step = np.linalg.solve(hess + 1e-12 * np.eye(len(theta)), grad)
        t = 1.0
        while True:
            cand = theta - t * step
            fc = _objective(cand, A, y, reg)
            if fc <= f - 1e-4 * t * grad @ step or t < 1e-10:
                break
            t *= 0.5
        theta, f = cand, fc
    p = _sigmoid(A @ theta)
    grad = A.T @ (p - y) + reg * theta
    return theta[:-1], float(theta[-1]), max_iterations, bool(np.max(np.abs(grad)) < tol)


def train_meta(component_probs, labels, config: MetaConfig = MetaConfig()) -> MetaModel:
    """Fit the blend on out-of-fold component probabilities (n, 3), columns
    ordered as ``config.components``."""
    P = np.asarray(component_probs, dtype=np.float64)
    y = np.asarray(labels)
    if P.ndim != 2 or P.shape[1] != 3:
        raise ValueError(f"expected (n, 3) component probabilities, got {P.shape}")
    if not np.all(np.isfinite(P)):
        raise NonFiniteInput("component probabilities must be finite")
    if len(np.unique(y)) < 2:
        raise SingleClass("meta-model training needs both classes")
    w, b, it, ok = fit_logistic(P, y, config.C, config.max_iterations, config.tol)
    return MetaModel(w, b, config, it, ok)


def meta_predict(weights, bias, probs) -> np.ndarray:
    """sigmoid(w . p + b) for each row of ``probs`` (or a single 3-vector)."""
    probs = np.asarray(probs, dtype=np.float64)
    return _sigmoid(probs @ np.asarray(weights, float) + bias)
