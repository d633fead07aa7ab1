"""Magnitude pruning of posterior draws: per-draw masks and one posterior-mean mask."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bnn import Model, NetworkWeights, draw_sigmas, draw_weights, predict_weights
from .metrics import PredictiveEnsemble, crps, rmse

SCHEMES = ("per_sample", "posterior")


@dataclass(frozen=True)
class PruneMask:
    """Keep-mask over the prunable weights (W1 then W_L, row-major)."""

    keep: np.ndarray
    sparsity: float

    @property
    def n_pruned(self) -> int:
        return int(self.keep.size - np.count_nonzero(self.keep))


def prunable_vector(weights: NetworkWeights) -> np.ndarray:
    parts = [np.ravel(weights.W1)]
    if weights.W_L is not None:
        parts.append(np.ravel(weights.W_L))
    return np.concatenate(parts)


def _check_sparsity(sparsity):
    if not 0.0 <= sparsity < 1.0:
        raise ValueError("sparsity must lie in [0, 1)")


def mask_from_magnitudes(magnitude: np.ndarray, sparsity: float) -> PruneMask:
    """Zero the round(sparsity * n) smallest entries; ties go to the lower index."""
    _check_sparsity(sparsity)
    n = magnitude.size
    count = int(round(sparsity * n))
    keep = np.ones(n, dtype=bool)
    if count:
        order = np.argsort(magnitude, kind="stable")
        keep[order[:count]] = False
    return PruneMask(keep, sparsity)


def apply_mask(weights: NetworkWeights, mask: PruneMask) -> NetworkWeights:
    out = weights.copy()
    n1 = out.W1.size
    out.W1 = np.where(mask.keep[:n1].reshape(out.W1.shape), out.W1, 0.0)
    if out.W_L is not None:
        out.W_L = np.where(mask.keep[n1:].reshape(out.W_L.shape), out.W_L, 0.0)
    return out


def _ensemble(X, weights, model, trace):
    return PredictiveEnsemble(predict_weights(X, weights, model.task),
                              sigma=draw_sigmas(trace, model), task=model.task)


def prune_per_sample(trace, sparsity: float, X, model: Model, weights=None) -> PredictiveEnsemble:
    """Each draw is pruned by its own weight magnitudes."""
    weights = draw_weights(trace, model) if weights is None else weights
    pruned = [apply_mask(w, mask_from_magnitudes(np.abs(prunable_vector(w)), sparsity))
              for w in weights]
    return _ensemble(X, pruned, model, trace)


def posterior_mask(weights: list[NetworkWeights], sparsity: float) -> PruneMask:
    mean_abs = np.mean([np.abs(prunable_vector(w)) for w in weights], axis=0)
    return mask_from_magnitudes(mean_abs, sparsity)


def posterior_prune(trace, sparsity: float, X, model: Model, weights=None) -> PredictiveEnsemble:
    """One mask from the posterior mean of |w|, applied to every draw."""
    weights = draw_weights(trace, model) if weights is None else weights
    mask = posterior_mask(weights, sparsity)
    return _ensemble(X, [apply_mask(w, mask) for w in weights], model, trace)


def _default_metric(ensemble, y, restore):
    return rmse(restore(ensemble), y)


def sparsity_sweep(trace, levels, X, y, model: Model, metrics=None, restore=None) -> list[dict]:
    """Metric rows (scheme, sparsity, metric, value) over ascending sparsity levels.

    ``metrics`` maps names to ``f(ensemble, y)``; ``restore`` maps a
    model-scale ensemble to the scale of ``y``.
    """
    levels = [float(v) for v in levels]
    if any(b < a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be sorted ascending")
    restore = restore or (lambda e: e)
    metrics = metrics or {"rmse": rmse, "crps": crps}
    weights = draw_weights(trace, model)
    rows = []
    for scheme, fn in (("per_sample", prune_per_sample), ("posterior", posterior_prune)):
        for level in levels:
            ens = restore(fn(trace, level, X, model, weights=weights))
            for name, metric in metrics.items():
                rows.append({"scheme": scheme, "sparsity": level, "metric": name,
                             "value": float(metric(ens, y))})
    return rows
