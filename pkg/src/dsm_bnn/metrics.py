"""Predictive metrics over posterior ensembles."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

LOG_2PI = math.log(2.0 * math.pi)
ECE_BINS = 10


@dataclass
class PredictiveEnsemble:
    """Draw-by-point predictions.

    ``draws`` has shape (M, n): regression outputs f_m(x_i), or class-1
    probabilities for classification. ``sigma`` holds one noise scale per
    draw for density evaluation.
    """

    draws: np.ndarray
    sigma: np.ndarray | None = None
    task: str = "regression"

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        if self.draws.shape[0] < 1:
            raise ValueError("ensemble needs at least one draw")
        if self.sigma is not None:
            self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float),
                                         (self.draws.shape[0],)).copy()
        if self.task == "binary_classification":
            if np.any(self.draws < 0) or np.any(self.draws > 1):
                raise ValueError("classification draws must be probabilities")

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def n_points(self) -> int:
        return self.draws.shape[1]

    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)


def _as_ensemble(ensemble) -> PredictiveEnsemble:
    return ensemble if isinstance(ensemble, PredictiveEnsemble) else PredictiveEnsemble(ensemble)


def _targets(y, n):
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != n:
        raise ValueError(f"expected {n} targets, got {y.size}")
    return y


def rmse(ensemble, y) -> float:
    """RMSE of the posterior-mean prediction."""
    ens = _as_ensemble(ensemble)
    y = _targets(y, ens.n_points)
    if y.size == 0:
        raise ValueError("no test points")
    return float(np.sqrt(np.mean((ens.mean() - y) ** 2)))


def crps_pointwise(ensemble, y) -> np.ndarray:
    """Empirical CRPS per test point: mean |x - y| minus half the mean pairwise spread."""
    ens = _as_ensemble(ensemble)
    y = _targets(y, ens.n_points)
    x = np.sort(ens.draws, axis=0)
    M = x.shape[0]
    abs_err = np.mean(np.abs(x - y[None, :]), axis=0)
    # sum_{i,j} |x_i - x_j| = 2 sum_i (2i - M + 1) x_(i) for sorted draws
    weights = 2.0 * np.arange(M) - M + 1.0
    pair_sum = 2.0 * (weights @ x)
    return abs_err - pair_sum / (2.0 * M * M)


def crps(ensemble, y) -> float:
    return float(np.mean(crps_pointwise(ensemble, y)))


def pnll_pointwise(ensemble, y) -> np.ndarray:
    """-log of the equal-weight Gaussian mixture density at each target."""
    ens = _as_ensemble(ensemble)
    if ens.sigma is None:
        raise ValueError("pnll needs noise-scale draws")
    y = _targets(y, ens.n_points)
    s = ens.sigma[:, None]
    logp = -0.5 * LOG_2PI - np.log(s) - 0.5 * ((y[None, :] - ens.draws) / s) ** 2
    return -(special.logsumexp(logp, axis=0) - math.log(ens.n_draws))


def pnll(ensemble, y) -> float:
    return float(np.mean(pnll_pointwise(ensemble, y)))


def _labels(labels, n):
    labels = _targets(labels, n)
    if np.any((labels != 0) & (labels != 1)):
        raise ValueError("labels must be 0 or 1")
    return labels


def accuracy(ensemble, labels) -> float:
    """Accuracy of thresholding the mean probability at 0.5."""
    ens = _as_ensemble(ensemble)
    labels = _labels(labels, ens.n_points)
    pred = (ens.mean() >= 0.5).astype(float)
    return float(np.mean(pred == labels))


def binary_nll(ensemble, labels) -> float:
    """Mean negative log-likelihood of the labels under the mean probability."""
    ens = _as_ensemble(ensemble)
    labels = _labels(labels, ens.n_points)
    q = ens.mean()
    tiny = np.finfo(float).tiny
    return float(-np.mean(labels * np.log(np.maximum(q, tiny))
                          + (1 - labels) * np.log(np.maximum(1 - q, tiny))))


def ece(ensemble, labels, bins: int = ECE_BINS) -> float:
    """Expected calibration error over equal-width confidence bins on [0, 1].

    Confidence is the probability of the predicted label, max(q, 1 - q).
    """
    ens = _as_ensemble(ensemble)
    labels = _labels(labels, ens.n_points)
    q = ens.mean()
    pred = (q >= 0.5).astype(float)
    conf = np.maximum(q, 1.0 - q)
    correct = (pred == labels).astype(float)
    idx = np.minimum((conf * bins).astype(int), bins - 1)
    total = 0.0
    for b in range(bins):
        sel = idx == b
        if np.any(sel):
            total += sel.mean() * abs(correct[sel].mean() - conf[sel].mean())
    return float(total)


def regression_summary(ensemble, y) -> dict:
    ens = _as_ensemble(ensemble)
    out = {"rmse": rmse(ens, y), "crps": crps(ens, y)}
    if ens.sigma is not None:
        out["pnll"] = pnll(ens, y)
    return out


def classification_summary(ensemble, labels) -> dict:
    return {"accuracy": accuracy(ensemble, labels), "nll": binary_nll(ensemble, labels),
            "ece": ece(ensemble, labels)}
