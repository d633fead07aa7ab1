"""Linearized shrinkage analysis of a single-hidden-layer network.

Around a reference state the network is linear in the flattened first-layer
weights ``w1 = vec(W1^T)`` (one block of p weights per hidden unit). The
remaining Gaussian parameters are integrated out, giving the prior
precision ``P`` and data precision ``S`` whose pair defines the shrinkage
matrix ``K = (P + S)^{-1} S``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .bnn import Model, unpack_weights
from .layout import ParameterVector
from .priors import SCALE_FLOOR, hierarchy_forward

WOODBURY_MIN_N = 2000


@dataclass
class Linearization:
    """Linear-Gaussian surrogate of a network at one reference state.

    ``tau`` and ``Psi`` (the diagonal of the prior covariance without the
    global scale) satisfy ``P = diag(1 / (tau^2 Psi))``; ``P`` is stored as
    its diagonal.
    """

    J_w: np.ndarray
    J_b: np.ndarray
    Phi0: np.ndarray
    sigma: float
    tau: float
    Psi: np.ndarray
    P: np.ndarray
    S: np.ndarray
    Sigma_y: np.ndarray | None = None
    intercept: bool = True

    @property
    def Q(self) -> np.ndarray:
        """Columns [J_b, Phi0, 1] integrated out of the marginal covariance."""
        n = self.J_w.shape[0]
        ones = np.ones((n, 1 if self.intercept else 0))
        return np.hstack([self.J_b, self.Phi0, ones])

    @property
    def dim(self) -> int:
        return self.J_w.shape[1]


def _data_precision(J: np.ndarray, Q: np.ndarray, sigma: float, woodbury: bool | None):
    """S = J^T Sigma_y^{-1} J with Sigma_y = Q Q^T + sigma^2 I."""
    n = J.shape[0]
    s2 = sigma * sigma
    if woodbury is None:
        woodbury = n > WOODBURY_MIN_N
    if woodbury:
        # Sigma_y^{-1} = s^-2 (I - Q (s^2 I + Q^T Q)^{-1} Q^T)
        inner = s2 * np.eye(Q.shape[1]) + Q.T @ Q
        QtJ = Q.T @ J
        S = (J.T @ J - QtJ.T @ linalg.solve(inner, QtJ, assume_a="pos")) / s2
        return 0.5 * (S + S.T), None
    Sigma_y = Q @ Q.T + s2 * np.eye(n)
    chol = linalg.cholesky(Sigma_y, lower=True)
    A = linalg.solve_triangular(chol, J, lower=True)
    return A.T @ A, Sigma_y


def build_linearization(reference, X, model: Model, sigma: float | None = None,
                        woodbury: bool | None = None) -> Linearization:
    """Jacobians, marginal covariance and the (P, S) pair at a reference state.

    ``sigma`` defaults to the state's own noise scale (regression) or 1.
    Linear models are handled with J_w = X and only the intercept
    integrated out.
    """
    theta = reference.values if isinstance(reference, ParameterVector) else np.asarray(reference, float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    layout = model.layout
    blocks = layout.split(theta)
    fwd = hierarchy_forward(blocks, model.spec, layout)
    weights = unpack_weights(theta, model)
    if sigma is None:
        sigma = math.exp(float(blocks["log_sigma"])) if "log_sigma" in blocks else 1.0
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    n = X.shape[0]
    if model.is_network:
        if model.shape.d != 1:
            raise ValueError("linearization is defined for a single output")
        A0 = X @ weights.W1.T + weights.b1
        Phi0 = np.tanh(A0)
        R = (1.0 - Phi0 * Phi0) * weights.W_L[:, 0]
        J_w = (R[:, :, None] * X[:, None, :]).reshape(n, -1)
        J_b = R
    else:
        J_w = X.copy()
        J_b = np.zeros((n, 0))
        Phi0 = np.zeros((n, 0))
    if not (np.all(np.isfinite(J_w)) and np.all(np.isfinite(Phi0))):
        raise FloatingPointError("non-finite linearization")
    prior_var = np.maximum(np.ravel(np.asarray(fwd.scale) * np.ones_like(weights.W1)), SCALE_FLOOR) ** 2
    tau = math.exp(float(blocks["log_tau"])) if "log_tau" in blocks else 1.0
    Psi = prior_var / (tau * tau)
    Q = np.hstack([J_b, Phi0, np.ones((n, 1))])
    S, Sigma_y = _data_precision(J_w, Q, sigma, woodbury)
    return Linearization(J_w=J_w, J_b=J_b, Phi0=Phi0, sigma=float(sigma), tau=tau, Psi=Psi,
                         P=1.0 / prior_var, S=S, Sigma_y=Sigma_y)


def _diag(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    return np.diag(P).copy() if P.ndim == 2 else P


def shrinkage_matrix(P, S, form: str = "data") -> np.ndarray:
    """K = (P + S)^{-1} S, or the equivalent I - (P + S)^{-1} P with ``form="prior"``."""
    p = _diag(P)
    S = np.asarray(S, dtype=float)
    if S.shape != (p.size, p.size):
        raise ValueError("P and S dimensions differ")
    M = S + np.diag(p)
    try:
        factor = linalg.cho_factor(M)
    except linalg.LinAlgError as exc:
        raise linalg.LinAlgError(f"P + S is not positive definite: {exc}") from None
    if form == "data":
        return linalg.cho_solve(factor, S)
    if form == "prior":
        return np.eye(p.size) - linalg.cho_solve(factor, np.diag(p))
    raise ValueError("form must be 'data' or 'prior'")


def whitened_spectrum(P, S) -> np.ndarray:
    """Eigenvalues (descending, clipped at 0) of G = P^{-1/2} S P^{-1/2}."""
    p = _diag(P)
    if np.any(p <= 0):
        raise ValueError("P must have a positive diagonal")
    d = 1.0 / np.sqrt(p)
    G = d[:, None] * np.asarray(S, dtype=float) * d[None, :]
    omega = linalg.eigvalsh(0.5 * (G + G.T))
    return np.clip(omega[::-1], 0.0, None)


def generalized_modes(P, S):
    """Generalized eigenpairs S u = omega P u with unit-norm u, omega descending."""
    p = _diag(P)
    omega, U = linalg.eigh(np.asarray(S, dtype=float), np.diag(p))
    order = np.argsort(omega)[::-1]
    U = U[:, order]
    return np.clip(omega[order], 0.0, None), U / np.linalg.norm(U, axis=0)


def m_eff_trace(P, S, method: str = "spectrum") -> float:
    """Effective number of parameters tr(K), from the whitened spectrum or directly."""
    if method == "spectrum":
        omega = whitened_spectrum(P, S)
        return float(np.sum(omega / (1.0 + omega)))
    if method == "trace":
        return float(np.trace(shrinkage_matrix(P, S)))
    raise ValueError("method must be 'spectrum' or 'trace'")


def _psi_eff_sq(u, Psi) -> float:
    return 1.0 / float(np.sum(u * u / np.asarray(Psi, dtype=float)))


def mode_shrinkage(u, P, S, tau: float, Psi) -> tuple[float, float]:
    """(kappa(u), psi_eff^2(u)) of a unit direction in weight space."""
    u = np.asarray(u, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-8:
        raise ValueError("u must have unit norm")
    psi2 = _psi_eff_sq(u, Psi)
    uSu = max(float(u @ np.asarray(S) @ u), 0.0)
    return 1.0 / (1.0 + tau * tau * psi2 * uSu), psi2


def shrinkage_bounds(linz: Linearization, u, tau: float | None = None) -> tuple[float, float]:
    """Lower and upper bounds on 1 - kappa(u) from the spectral bounds on Sigma_y^{-1}."""
    u = np.asarray(u, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-8:
        raise ValueError("u must have unit norm")
    tau = linz.tau if tau is None else tau
    psi2 = _psi_eff_sq(u, linz.Psi)
    Ju2 = float(np.sum((linz.J_w @ u) ** 2))
    s2 = linz.sigma ** 2
    Q = linz.Q
    q_norm2 = float(np.linalg.norm(Q, 2) ** 2) if Q.size else 0.0
    lower = 1.0 - 1.0 / (1.0 + psi2 * tau * tau * Ju2 / (s2 + q_norm2))
    upper = 1.0 - 1.0 / (1.0 + psi2 * tau * tau * Ju2 / s2)
    return lower, upper


@dataclass
class MeffSeries:
    values: np.ndarray
    draw_index: np.ndarray
    skipped: int
    spectra: list | None = None


def posterior_m_eff_trace(trace, X, model: Model, thin: int = 1, keep_spectra: bool = False,
                          woodbury: bool | None = None) -> MeffSeries:
    """tr(K) at every (thinned) posterior draw used as the reference state."""
    flat = trace.flat() if hasattr(trace, "draws") else np.atleast_2d(np.asarray(trace, dtype=float))
    index = np.arange(0, flat.shape[0], max(1, int(thin)))
    values, kept, spectra = [], [], []
    skipped = 0
    for i in index:
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                linz = build_linearization(flat[i], X, model, woodbury=woodbury)
            if not (np.all(np.isfinite(linz.S)) and np.all(np.isfinite(linz.P))):
                raise FloatingPointError("non-finite precision")
            omega = whitened_spectrum(linz.P, linz.S)
        except (FloatingPointError, linalg.LinAlgError, OverflowError, ValueError):
            skipped += 1
            continue
        values.append(float(np.sum(omega / (1.0 + omega))))
        kept.append(i)
        if keep_spectra:
            spectra.append(omega)
    return MeffSeries(np.array(values), np.array(kept, dtype=int), skipped,
                      spectra if keep_spectra else None)
