"""Prior families, their hyperparameters and log densities on unconstrained space.

Every shrinkage family shares one non-centred construction of the first-layer
weights,

    W[g, k] = tau * sqrt(lambda_tilde_sq[g]) * sqrt(xi[g, k]) * z[g, k] / sqrt(p),

where the division by sqrt(p) can be switched off. ``xi`` is a Dirichlet
simplex per group (DHS, DST), independent Beta draws (BHS, BST) or absent
(RHS). The Gaussian family keeps ``W = z / sqrt(p)``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .layout import Layout

FAMILIES = ("Gaussian", "RHS", "DHS", "DST", "BHS", "BST")
_HORSESHOE = {"RHS", "DHS", "BHS"}
_STUDENT = {"DST", "BST"}
LOG_2PI = math.log(2.0 * math.pi)
SCALE_FLOOR = 1e-12


def simplex_kind(family: str):
    """'dirichlet', 'beta' or None for the per-weight allocation variable."""
    if family in ("DHS", "DST"):
        return "dirichlet"
    if family in ("BHS", "BST"):
        return "beta"
    return None


@dataclass(frozen=True)
class PriorSpec:
    """Prior family and hyperparameters.

    ``nu`` defaults to 1 for the horseshoe families and 3 for the Student-t
    families. ``tau0`` is filled in from the data with :meth:`with_tau0`.
    """

    family: str = "DHS"
    nu: float | None = None
    alpha: float = 0.1
    p0: int = 4
    slab_df: float = 4.0
    slab_scale_sq: float = 2.0
    sigma_a: float = 3.0
    sigma_b: float = 2.0
    scale_by_sqrt_p: bool = True
    tau0: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown prior family {self.family!r}; expected one of {FAMILIES}")
        if self.family in _HORSESHOE and self.nu not in (None, 1, 1.0):
            raise ValueError(f"{self.family} uses nu = 1 for its local scales")
        if self.nu is not None and not self.nu > 0:
            raise ValueError("nu must be positive")
        if self.family != "Gaussian" and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        for name in ("slab_df", "slab_scale_sq", "sigma_a", "sigma_b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.p0 < 1:
            raise ValueError("p0 must be a positive integer")
        if self.tau0 is not None and not self.tau0 > 0:
            raise ValueError("tau0 must be positive")

    @property
    def lambda_df(self) -> float:
        if self.nu is not None:
            return float(self.nu)
        return 3.0 if self.family in _STUDENT else 1.0

    def with_tau0(self, p: int, N: int, sigma_guess: float = 1.0) -> "PriorSpec":
        return dataclasses.replace(self, tau0=tau0(self.p0, p, sigma_guess, N))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PriorSpec":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - fields
        if unknown:
            raise ValueError(f"unknown prior fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class ScaleState:
    """Constrained scale parameters decoded from one sampler state."""

    tau: float
    lam: np.ndarray
    xi: np.ndarray
    c_sq: np.ndarray
    lambda_tilde_sq: np.ndarray


def tau0(p0: int, p: int, sigma_guess: float, N: int) -> float:
    """Global-scale prior width p0/(p - p0) * sigma/sqrt(N)."""
    if not 0 < p0 < p:
        raise ValueError(f"tau0 needs 0 < p0 < p, got p0={p0}, p={p}")
    if N < 1:
        raise ValueError("tau0 needs N >= 1")
    return p0 / (p - p0) * sigma_guess / math.sqrt(N)


def regularized_scale(lam, tau, c_sq):
    """Slab-truncated local scale c^2 lam^2 / (c^2 + tau^2 lam^2)."""
    lam = np.asarray(lam, dtype=float)
    out = c_sq * lam**2 / (c_sq + tau**2 * lam**2)
    return float(out) if out.ndim == 0 else out


def _softplus(x):
    return np.logaddexp(0.0, x)


def _stick_offsets(K: int) -> np.ndarray:
    return np.log(np.arange(K - 1, 0, -1, dtype=float))


def stick_breaking(y: np.ndarray):
    """Map (..., K-1) unconstrained rows to log-simplex rows (..., K).

    Returns ``(log_xi, log_jacobian, stick)`` where ``stick`` holds the break
    proportions needed for the gradient. Zero unconstrained values give the
    uniform simplex.
    """
    K = y.shape[-1] + 1
    x = y - _stick_offsets(K)
    log_z = -_softplus(-x)
    log_1mz = -_softplus(x)
    rem = np.cumsum(log_1mz, axis=-1)
    rem_before = rem - log_1mz
    log_xi = np.concatenate([log_z + rem_before, rem[..., -1:]], axis=-1) if K > 1 else np.zeros(
        y.shape[:-1] + (1,))
    log_jac = np.sum(log_z + log_1mz + rem_before, axis=-1)
    return log_xi, log_jac, np.exp(log_z)


def stick_breaking_grad(g_log_xi: np.ndarray, stick: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the unconstrained rows of ``sum(g * log_xi) + log_jacobian``."""
    K = g_log_xi.shape[-1]
    if K == 1:
        return np.zeros(g_log_xi.shape[:-1] + (0,))
    tail = np.cumsum(g_log_xi[..., ::-1], axis=-1)[..., ::-1][..., 1:]
    later = np.arange(K - 2, -1, -1, dtype=float)
    return (g_log_xi[..., :-1] * (1.0 - stick) - stick * tail
            + (1.0 - 2.0 * stick) - stick * later)


def simplex_to_unconstrained(xi=None, log_xi=None) -> np.ndarray:
    """Inverse of :func:`stick_breaking`; accepts the simplex or its log."""
    if log_xi is None:
        log_xi = np.log(np.asarray(xi, dtype=float))
    log_xi = np.asarray(log_xi, dtype=float)
    K = log_xi.shape[-1]
    # remaining stick mass from position k onward
    log_rem = np.logaddexp.accumulate(log_xi[..., ::-1], axis=-1)[..., ::-1]
    return log_xi[..., :-1] - log_rem[..., 1:] + _stick_offsets(K)


def _half_t_logpdf_log(log_x, df):
    # log density of half-t_df at x = exp(log_x), plus the log-transform Jacobian
    x2 = np.exp(2.0 * log_x)
    const = (math.log(2.0) + special.gammaln((df + 1) / 2) - special.gammaln(df / 2)
             - 0.5 * math.log(df * math.pi))
    return const - 0.5 * (df + 1) * np.log1p(x2 / df) + log_x


def _invgamma_logpdf_log(log_x, shape, rate):
    # log density of InvGamma(shape, rate) at exp(log_x), plus Jacobian
    return (shape * math.log(rate) - special.gammaln(shape) - shape * log_x
            - rate * np.exp(-log_x))


@dataclass
class _Forward:
    W: np.ndarray
    lp: float
    scale: object = None
    active: np.ndarray | None = None
    r: np.ndarray | None = None
    stick: np.ndarray | None = None
    xi: np.ndarray | None = None


def hierarchy_forward(blocks: dict, spec: PriorSpec, layout: Layout) -> _Forward:
    """First-layer weights and the log prior of every non-likelihood block."""
    z = blocks["z_W1"]
    K = layout.width
    root_p = math.sqrt(K) if spec.scale_by_sqrt_p else 1.0
    lp = -0.5 * float(np.sum(z * z)) - 0.5 * z.size * LOG_2PI
    for name in ("b1", "W_L", "b_L"):
        if name in blocks:
            block = blocks[name]
            lp += -0.5 * float(np.sum(block * block)) - 0.5 * np.size(block) * LOG_2PI
    if "log_sigma" in blocks:
        log_sigma = blocks["log_sigma"]
        lp += float(_invgamma_logpdf_log(2.0 * log_sigma, spec.sigma_a, spec.sigma_b)) + math.log(2.0)

    if spec.family == "Gaussian":
        return _Forward(W=z / root_p, lp=lp, scale=1.0 / root_p)

    if spec.tau0 is None:
        raise ValueError("tau0 is unresolved; call PriorSpec.with_tau0 first")
    log_tau = float(blocks["log_tau"])
    tau = math.exp(log_tau)
    ratio = tau / spec.tau0
    lp += math.log(2.0 / (math.pi * spec.tau0)) - math.log1p(ratio * ratio) + log_tau

    log_lam = blocks["log_lambda"]
    lp += float(np.sum(_half_t_logpdf_log(log_lam, spec.lambda_df)))
    log_c = blocks["log_c_sq"]
    slab_a = 0.5 * spec.slab_df
    slab_b = 0.5 * spec.slab_df * spec.slab_scale_sq
    lp += float(np.sum(_invgamma_logpdf_log(log_c, slab_a, slab_b)))

    # log lambda_tilde^2 = log c^2 + 2 log lambda - log(c^2 + tau^2 lambda^2)
    log_tl2 = 2.0 * log_tau + 2.0 * log_lam
    c_b = log_c if layout.lambda_per_row else np.broadcast_to(log_c, log_lam.shape)
    log_den = np.logaddexp(c_b, log_tl2)
    log_lt = c_b + 2.0 * log_lam - log_den
    r = np.exp(log_tl2 - log_den)
    log_lt_b = log_lt[:, None] if layout.lambda_per_row else log_lt[None, :]

    fwd = _Forward(W=None, lp=0.0, r=r)
    log_scale = log_tau + 0.5 * log_lt_b
    if layout.simplex == "dirichlet":
        alpha = spec.alpha
        log_xi, log_jac, stick = stick_breaking(blocks["xi"])
        lp += float(np.sum((alpha - 1.0) * log_xi) + np.sum(log_jac))
        lp += layout.groups * float(special.gammaln(K * alpha) - K * special.gammaln(alpha))
        log_scale = log_scale + 0.5 * log_xi
        fwd.stick, fwd.xi = stick, log_xi
    elif layout.simplex == "beta":
        alpha = spec.alpha
        beta = (K - 1) * alpha
        if not beta > 0:
            raise ValueError("Beta allocation needs p >= 2")
        u = blocks["xi"]
        log_xi = -_softplus(-u)
        log_1mxi = -_softplus(u)
        lp += float(np.sum(alpha * log_xi + beta * log_1mxi)) - u.size * float(special.betaln(alpha, beta))
        log_scale = log_scale + 0.5 * log_xi
        fwd.xi = log_xi
    scale = np.exp(log_scale)
    active = scale > SCALE_FLOOR
    scale = np.where(active, scale, SCALE_FLOOR) / root_p
    fwd.W = scale * z
    fwd.lp = lp
    fwd.scale = scale
    fwd.active = active
    return fwd


def hierarchy_backward(gW: np.ndarray, blocks: dict, spec: PriorSpec, layout: Layout,
                       fwd: _Forward) -> dict:
    """Gradient of (log prior + a term with dlogp/dW = gW) for each block."""
    z = blocks["z_W1"]
    grads = {"z_W1": gW * fwd.scale - z}
    for name in ("b1", "W_L", "b_L"):
        if name in blocks:
            grads[name] = -np.asarray(blocks[name])
    if "log_sigma" in blocks:
        sigma_sq = math.exp(2.0 * float(blocks["log_sigma"]))
        grads["log_sigma"] = -2.0 * spec.sigma_a + 2.0 * spec.sigma_b / sigma_sq
    if spec.family == "Gaussian":
        return grads

    tau = math.exp(float(blocks["log_tau"]))
    ratio2 = (tau / spec.tau0) ** 2
    g_log_tau = 1.0 - 2.0 * ratio2 / (1.0 + ratio2)

    lam2 = np.exp(2.0 * blocks["log_lambda"])
    nu = spec.lambda_df
    g_log_lam = 1.0 - (nu + 1.0) * lam2 / (nu + lam2)

    c_sq = np.exp(blocks["log_c_sq"])
    g_log_c = -0.5 * spec.slab_df + 0.5 * spec.slab_df * spec.slab_scale_sq / c_sq

    g_log_scale = gW * fwd.W * fwd.active
    g_log_tau += float(np.sum(g_log_scale))
    axis = 1 if layout.lambda_per_row else 0
    g_log_lt = 0.5 * np.sum(g_log_scale, axis=axis)
    r = fwd.r
    g_log_lam = g_log_lam + 2.0 * (1.0 - r) * g_log_lt
    g_log_tau += float(np.sum(-2.0 * r * g_log_lt))
    if layout.lambda_per_row:
        g_log_c = g_log_c + r * g_log_lt
    else:
        g_log_c = g_log_c + np.sum(r * g_log_lt)

    grads["log_tau"] = g_log_tau
    grads["log_lambda"] = g_log_lam
    grads["log_c_sq"] = g_log_c

    if layout.simplex == "dirichlet":
        g_log_xi = 0.5 * g_log_scale + (spec.alpha - 1.0)
        grads["xi"] = stick_breaking_grad(g_log_xi, fwd.stick)
    elif layout.simplex == "beta":
        K = layout.width
        alpha, beta = spec.alpha, (K - 1) * spec.alpha
        xi = np.exp(fwd.xi)
        grads["xi"] = 0.5 * g_log_scale * (1.0 - xi) + alpha * (1.0 - xi) - beta * xi
    return grads


def log_prior(theta: np.ndarray, spec: PriorSpec, layout: Layout) -> float:
    """Log prior density of an unconstrained state, Jacobians included."""
    blocks = layout.split(np.asarray(theta, dtype=float))
    return hierarchy_forward(blocks, spec, layout).lp


def scale_state(theta: np.ndarray, spec: PriorSpec, layout: Layout) -> ScaleState:
    """Decode tau, lambda, xi, c^2 and lambda_tilde^2 from a state."""
    blocks = layout.split(np.asarray(theta, dtype=float))
    G, K = layout.groups, layout.width
    if spec.family == "Gaussian":
        one = np.ones(G if layout.lambda_per_row else K)
        return ScaleState(1.0, one, np.ones((G, K)), np.full(1, np.inf), one)
    tau = math.exp(float(blocks["log_tau"]))
    lam = np.exp(blocks["log_lambda"])
    c_sq = np.exp(blocks["log_c_sq"])
    lt = regularized_scale(lam, tau, c_sq if layout.lambda_per_row else c_sq[0])
    if layout.simplex == "dirichlet":
        xi = np.exp(stick_breaking(blocks["xi"])[0])
    elif layout.simplex == "beta":
        xi = special.expit(blocks["xi"])
    else:
        xi = np.ones((G, K))
    return ScaleState(tau, lam, xi, c_sq, np.atleast_1d(lt))


def _log_gamma_draws(rng, shape_param, size):
    # log of Gamma(shape, 1) draws that stays finite for tiny shapes
    return np.log(rng.gamma(shape_param + 1.0, size=size)) + np.log(rng.uniform(size=size)) / shape_param


def sample_prior(spec: PriorSpec, layout: Layout, seed=None, size: int | None = None):
    """Draw unconstrained states from the full prior hierarchy."""
    rng = np.random.default_rng(seed)
    n = 1 if size is None else size
    out = np.empty((n, layout.dim))
    G, K = layout.groups, layout.width
    for i in range(n):
        blocks = {}
        blocks["z_W1"] = rng.standard_normal((G, K))
        for name in ("b1", "W_L", "b_L"):
            if name in layout:
                blocks[name] = rng.standard_normal(layout.slices[name][1])
        if spec.family != "Gaussian":
            if spec.tau0 is None:
                raise ValueError("tau0 is unresolved; call PriorSpec.with_tau0 first")
            blocks["log_tau"] = math.log(spec.tau0 * abs(rng.standard_cauchy()))
            n_lam = layout.slices["log_lambda"][1][0]
            blocks["log_lambda"] = np.log(np.abs(rng.standard_t(spec.lambda_df, size=n_lam)))
            n_c = layout.slices["log_c_sq"][1][0]
            slab_a = 0.5 * spec.slab_df
            slab_b = 0.5 * spec.slab_df * spec.slab_scale_sq
            blocks["log_c_sq"] = math.log(slab_b) - np.log(rng.gamma(slab_a, size=n_c))
            if layout.simplex == "dirichlet":
                log_g = _log_gamma_draws(rng, spec.alpha, (G, K))
                log_xi = log_g - special.logsumexp(log_g, axis=1, keepdims=True)
                blocks["xi"] = simplex_to_unconstrained(log_xi=log_xi)
            elif layout.simplex == "beta":
                beta = (K - 1) * spec.alpha
                log_a = _log_gamma_draws(rng, spec.alpha, (G, K))
                log_b = _log_gamma_draws(rng, beta, (G, K))
                blocks["xi"] = log_a - log_b
        if "log_sigma" in layout:
            sigma_sq = spec.sigma_b / rng.gamma(spec.sigma_a)
            blocks["log_sigma"] = 0.5 * math.log(sigma_sq)
        out[i] = layout.join(blocks)
    return out[0] if size is None else out
