"""Convergence diagnostics: rank-normalized split R-hat and bulk/tail ESS."""

from __future__ import annotations

import numpy as np
from scipy import special, stats


def _series(source, coordinate=None) -> np.ndarray:
    """(chains, draws) array from a Trace coordinate, a derived scalar or an array."""
    if hasattr(source, "draws"):
        if isinstance(coordinate, str):
            if coordinate in source.derived:
                return np.asarray(source.derived[coordinate], dtype=float)
            coordinate = source.coordinate_names.index(coordinate)
        return np.asarray(source.draws[:, :, coordinate], dtype=float)
    arr = np.asarray(source, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def _check(x):
    if x.shape[0] < 1 or x.shape[1] < 4:
        raise ValueError("diagnostics need at least 4 draws per chain")


def _split(x: np.ndarray) -> np.ndarray:
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, -half:]], axis=0)


def _z_scale(x: np.ndarray) -> np.ndarray:
    ranks = stats.rankdata(x, method="average").reshape(x.shape)
    return special.ndtri((ranks - 0.375) / (x.size + 0.25))


def _rhat(x: np.ndarray) -> float:
    n = x.shape[1]
    within = np.mean(np.var(x, axis=1, ddof=1))
    between = n * np.var(np.mean(x, axis=1), ddof=1)
    if within == 0:
        return 1.0 if between == 0 else np.inf
    var_hat = (n - 1) / n * within + between / n
    return float(np.sqrt(var_hat / within))


def split_rhat(source, coordinate=None) -> float:
    """Rank-normalized split R-hat: the larger of the bulk and folded-tail values."""
    x = _series(source, coordinate)
    _check(x)
    if np.all(x == x.flat[0]):
        return 1.0
    bulk = _rhat(_z_scale(_split(x)))
    folded = np.abs(x - np.median(x))
    tail = _rhat(_z_scale(_split(folded))) if not np.all(folded == folded.flat[0]) else 1.0
    return max(bulk, tail)


def _autocov(x: np.ndarray) -> np.ndarray:
    # biased autocovariance per chain through a zero-padded FFT
    n = x.shape[1]
    centered = x - x.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(centered, n=size, axis=1)
    acov = np.fft.irfft(spec * np.conjugate(spec), n=size, axis=1)[:, :n]
    return acov / n


def _ess_raw(x: np.ndarray) -> float:
    n_chain, n_draw = x.shape
    if np.all(x == x.flat[0]):
        return 0.0
    acov = _autocov(x)
    chain_mean = x.mean(axis=1)
    mean_var = np.mean(acov[:, 0]) * n_draw / (n_draw - 1.0)
    var_plus = mean_var * (n_draw - 1.0) / n_draw
    if n_chain > 1:
        var_plus += np.var(chain_mean, ddof=1)
    if var_plus <= 0:
        return 0.0
    rho = np.zeros(n_draw)
    rho_even = 1.0
    rho[0] = 1.0
    rho_odd = 1.0 - (mean_var - np.mean(acov[:, 1])) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n_draw - 3 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - np.mean(acov[:, t + 1])) / var_plus
        rho_odd = 1.0 - (mean_var - np.mean(acov[:, t + 2])) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0:
        rho[max_t + 1] = rho_even
    # initial monotone sequence on paired sums
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    total = n_chain * n_draw
    tau = -1.0 + 2.0 * np.sum(rho[: max_t + 1]) + rho[max_t + 1]
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


def ess(source, coordinate=None) -> tuple[float, float]:
    """(bulk, tail) effective sample sizes; 0 for constant input."""
    x = _series(source, coordinate)
    _check(x)
    if np.all(x == x.flat[0]):
        return 0.0, 0.0
    bulk = _ess_raw(_z_scale(_split(x)))
    q05, q95 = np.quantile(x, [0.05, 0.95])
    tails = [_ess_raw(_split((x <= q).astype(float))) for q in (q05, q95)]
    return bulk, float(min(tails))


def ess_mean(source, coordinate=None) -> float:
    """ESS of the plain (not rank-normalized) split chains, for the MC error of a mean."""
    x = _series(source, coordinate)
    _check(x)
    return _ess_raw(_split(x))


def mcse_mean(source, coordinate=None) -> float:
    x = _series(source, coordinate)
    n_eff = ess_mean(x)
    return float(np.std(x, ddof=1) / np.sqrt(n_eff)) if n_eff > 0 else 0.0


def summarize(trace, coordinates=None) -> dict:
    """R-hat, ESS and divergence summaries in the format of the diagnostics table."""
    coords = range(trace.dim) if coordinates is None else coordinates
    rhats, bulks, tails = [], [], []
    for c in coords:
        rhats.append(split_rhat(trace, c))
        b, t = ess(trace, c)
        bulks.append(b)
        tails.append(t)
    total = trace.n_chains * trace.n_draws
    rhats = np.array(rhats)
    return {
        "max_rhat": float(np.max(rhats)),
        "median_rhat": float(np.median(rhats)),
        "median_ess_bulk_per_draw": float(np.median(bulks) / total),
        "median_ess_tail_per_draw": float(np.median(tails) / total),
        "min_ess_bulk": float(np.min(bulks)),
        "divergence_fraction": trace.divergence_fraction,
        "divergences": int(np.sum(trace.divergent)),
        "step_size": [float(s) for s in trace.step_size],
        "draws_per_chain": trace.n_draws,
        "chains": trace.n_chains,
    }
