"""Saturation power-law fits of a metric against training-set size.

The model is ``metric(n) = asymptote - alpha * n ** (-beta)``. Fits are
multi-start least squares; a fit that stalls on a parameter bound or
yields a singular Jacobian is returned flagged rather than raised.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.optimize import least_squares


class TooFewPoints(ValueError):
    pass


class NoConvergence(RuntimeError):
    pass


BETA_GRID = np.linspace(0.1, 1.5, 15)
_BETA_MAX = 10.0


@dataclass
class PowerLawFit:
    asymptote: float
    alpha: float
    beta: float
    covariance: np.ndarray = field(repr=False)
    r_squared: float
    converged: bool = True
    n_db: float | None = None

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.covariance), 0.0))

    @property
    def asymptote_se(self) -> float:
        return float(self.stderr[0])

    def predict(self, n):
        n = np.asarray(n, dtype=np.float64)
        return self.asymptote - self.alpha * n ** (-self.beta)

    def predict_se(self, n):
        """Delta-method standard error of the fitted curve."""
        n = np.asarray(n, dtype=np.float64)
        jac = _jacobian(np.array([self.asymptote, self.alpha, self.beta]), n)
        return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", jac, self.covariance, jac), 0.0))

    def as_dict(self) -> dict:
        return {"asymptote": self.asymptote, "alpha": self.alpha, "beta": self.beta,
                "stderr": self.stderr.tolist(), "covariance": self.covariance.tolist(),
                "r_squared": self.r_squared, "converged": self.converged,
                "n_db": self.n_db}


def _model(theta, n):
    return theta[0] - theta[1] * n ** (-theta[2])


def _jacobian(theta, n):
    pw = n ** (-theta[2])
    return np.stack([np.ones_like(n), -pw, theta[1] * pw * np.log(n)], axis=1)


def _linear_start(n, y, w, beta):
    # for fixed beta the model is linear in (asymptote, alpha)
    design = np.stack([np.ones_like(n), -n ** (-beta)], axis=1) * w[:, None]
    coef, *_ = np.linalg.lstsq(design, y * w, rcond=None)
    return np.array([coef[0], max(coef[1], 1e-8), beta])


def fit_power_law(n, metric, sigma=None, beta_grid=BETA_GRID) -> PowerLawFit:
    """Least-squares fit of the saturation power law.

    Parameters
    ----------
    n : array_like
        Training-set sizes (distinct, positive).
    metric : array_like
        Metric values at each size, e.g. mean AUC in percent.
    sigma : array_like, optional
        Per-point standard errors; if given, residuals are weighted by 1/sigma.

    Returns
    -------
    PowerLawFit
        ``converged`` is False when the optimum sits on a bound
        (beta or alpha) or the parameter covariance is not finite.
    """
    n = np.asarray(n, dtype=np.float64)
    y = np.asarray(metric, dtype=np.float64)
    if n.shape != y.shape or n.ndim != 1:
        raise ValueError("n and metric must be 1-D of equal length")
    if len(np.unique(n)) < 4:
        raise TooFewPoints("need at least 4 distinct sizes for 3 parameters")
    if np.any(n <= 0):
        raise ValueError("sizes must be positive")
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, dtype=np.float64)

    # rescale n so that n ** -beta stays O(1) during optimisation
    scale = float(np.exp(np.mean(np.log(n))))
    m = n / scale

    def resid(theta):
        return (_model(theta, m) - y) * w

    def jac(theta):
        return _jacobian(theta, m) * w[:, None]

    lower = [-np.inf, 0.0, 0.0]
    upper = [np.inf, np.inf, _BETA_MAX]
    best = None
    for beta in beta_grid:
        start = _linear_start(m, y, w, beta)
        res = least_squares(resid, start, jac=jac, bounds=(lower, upper), method="trf",
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        if best is None or res.cost < best.cost - 1e-12 * max(1.0, best.cost):
            best = res
    theta = best.x.copy()

    dof = len(y) - 3
    rss = float(np.sum(best.fun ** 2))
    jm = jac(theta)
    try:
        s2 = rss / dof if dof > 0 else 0.0
        if sigma is not None:
            s2 = max(s2, 0.0) if dof > 0 else 1.0
        cov_scaled = np.linalg.inv(jm.T @ jm) * s2
    except np.linalg.LinAlgError:
        cov_scaled = np.full((3, 3), np.nan)

    # map (A, alpha_scaled, beta) back to unscaled n: alpha = alpha_s * scale**beta
    a_s, beta = theta[1], theta[2]
    alpha = a_s * scale ** beta
    t = np.array([[1.0, 0.0, 0.0],
                  [0.0, scale ** beta, a_s * scale ** beta * np.log(scale)],
                  [0.0, 0.0, 1.0]])
    cov = t @ cov_scaled @ t.T

    resid_plain = y - _model(theta, m)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid_plain ** 2)) / ss_tot if ss_tot > 0 else 1.0

    on_bound = beta <= 1e-9 or beta >= _BETA_MAX - 1e-9 or a_s <= 1e-12
    converged = bool(best.success and not on_bound and np.all(np.isfinite(cov)))
    fit = PowerLawFit(float(theta[0]), float(alpha), float(beta), cov, r2, converged)
    if converged and fit.asymptote_se > 0:
        fit.n_db = n_db(fit, fit.asymptote_se)
    return fit


def n_db(fit: PowerLawFit, asymptote_se: float | None = None) -> float:
    """Size at which the fitted curve is within ``asymptote_se`` of its
    asymptote: (alpha / se) ** (1 / beta)."""
    if not fit.converged:
        raise NoConvergence("power-law fit did not converge")
    se = fit.asymptote_se if asymptote_se is None else asymptote_se
    if se <= 0:
        raise ValueError("asymptote_se must be positive")
    return float((fit.alpha / se) ** (1.0 / fit.beta))


def curve_points(fit: PowerLawFit, n_values) -> np.ndarray:
    """(n, fitted metric, delta-method SE) rows for plotting."""
    n_values = np.asarray(n_values, dtype=np.float64)
    return np.column_stack([n_values, fit.predict(n_values), fit.predict_se(n_values)])


def published_auc_table() -> list[dict]:
    """Mean cross-validation AUC (percent) and SE per model and dataset,
    as published for the TUH, SZC and ELM subset corpora."""
    text = resources.files("eegpath").joinpath("data/auc_table.csv").read_text()
    rows = list(csv.DictReader(text.splitlines()))
    for r in rows:
        r["n_recordings"] = int(r["n_recordings"])
        r["auc_mean"] = float(r["auc_mean"])
        r["auc_se"] = float(r["auc_se"])
    return rows


def published_scaling_reference() -> dict:
    """Published AUC asymptotes, their SE, R^2 and N_DB (thousands)."""
    text = resources.files("eegpath").joinpath("data/auc_scaling_reference.csv").read_text()
    out = {}
    for r in csv.DictReader(text.splitlines()):
        out[r["model"]] = {k: float(v) for k, v in r.items() if k != "model"}
    return out


ELM_SUBSETS = ("ELM1", "ELM2", "ELM4", "ELM8", "ELM19")


def elm_series(model: str):
    """(n, mean AUC, SE) arrays of one model over the nested ELM subsets."""
    rows = [r for r in published_auc_table() if r["model"] == model and r["dataset"] in ELM_SUBSETS]
    if not rows:
        raise KeyError(model)
    rows.sort(key=lambda r: r["n_recordings"])
    return (np.array([r["n_recordings"] for r in rows], dtype=float),
            np.array([r["auc_mean"] for r in rows]), np.array([r["auc_se"] for r in rows]))
