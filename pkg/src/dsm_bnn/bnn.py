"""Single-hidden-layer network (or linear model), likelihoods and exact gradients.

The gradient is a hand-written reverse pass over the fixed computation graph:
prior hierarchy -> first-layer weights -> tanh layer -> affine output ->
Gaussian or Bernoulli-logit likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special

from .layout import Layout, LinearShape, NetworkShape, ParameterVector
from .priors import LOG_2PI, PriorSpec, hierarchy_backward, hierarchy_forward


@dataclass(frozen=True)
class Model:
    """A network or linear shape together with its prior and task."""

    shape: NetworkShape | LinearShape
    spec: PriorSpec
    task: str = "regression"

    @cached_property
    def layout(self) -> Layout:
        return Layout(self.shape, self.spec.family, self.task)

    @property
    def is_network(self) -> bool:
        return isinstance(self.shape, NetworkShape)

    def vector(self, theta) -> ParameterVector:
        return ParameterVector(theta, self.layout)


@dataclass
class NetworkWeights:
    """Constrained weights of a state; ``b1`` and ``W_L`` are None for linear models."""

    W1: np.ndarray
    b1: np.ndarray | None
    W_L: np.ndarray | None
    b_L: np.ndarray

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(*(None if a is None else np.array(a) for a in
                                (self.W1, self.b1, self.W_L, self.b_L)))


def _as_theta(params) -> np.ndarray:
    return params.values if isinstance(params, ParameterVector) else np.asarray(params, dtype=float)


def assemble_first_layer(params, model: Model) -> np.ndarray:
    """First-layer weight matrix (H x p; 1 x p for linear models)."""
    blocks = model.layout.split(_as_theta(params))
    return hierarchy_forward(blocks, model.spec, model.layout).W


def unpack_weights(params, model: Model) -> NetworkWeights:
    blocks = model.layout.split(_as_theta(params))
    W1 = hierarchy_forward(blocks, model.spec, model.layout).W
    if model.is_network:
        return NetworkWeights(W1, np.array(blocks["b1"]), np.array(blocks["W_L"]),
                              np.array(blocks["b_L"]))
    return NetworkWeights(W1, None, None, np.array(blocks["b_L"]))


def forward_weights(X: np.ndarray, weights: NetworkWeights) -> np.ndarray:
    """Outputs (N x d) of explicit weights."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != weights.W1.shape[1]:
        raise ValueError(f"X has {X.shape[1]} columns, model expects {weights.W1.shape[1]}")
    if weights.W_L is None:
        return X @ weights.W1.T + weights.b_L
    hidden = np.tanh(X @ weights.W1.T + weights.b1)
    return hidden @ weights.W_L + weights.b_L


def forward(X: np.ndarray, params, model: Model) -> np.ndarray:
    """Network outputs (N x d) at an unconstrained state."""
    return forward_weights(X, unpack_weights(params, model))


def sigma_of(params, model: Model) -> float:
    return math.exp(float(model.layout.split(_as_theta(params))["log_sigma"]))


def _targets(y, n: int, d: int) -> np.ndarray:
    Y = np.asarray(y, dtype=float)
    return Y.reshape(n, d)


class Posterior:
    """Unnormalized log posterior of a model on fixed training data.

    Calling the object returns ``(log_density, gradient)``; it is picklable so
    chains can run in worker processes.
    """

    def __init__(self, model: Model, X: np.ndarray, y: np.ndarray):
        self.model = model
        self.layout = model.layout
        self.spec = model.spec
        self.X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)).reshape(-1, model.shape.p))
        n = self.X.shape[0]
        self.Y = _targets(y, n, model.shape.d) if n else np.zeros((0, model.shape.d))
        if model.task == "binary_classification" and np.any((self.Y != 0) & (self.Y != 1)):
            raise ValueError("classification labels must be 0 or 1")
        self.dim = self.layout.dim

    def __call__(self, theta):
        return self._evaluate(np.asarray(theta, dtype=float), True)

    def log_density(self, theta) -> float:
        return self._evaluate(np.asarray(theta, dtype=float), False)[0]

    def gradient(self, theta) -> np.ndarray:
        return self._evaluate(np.asarray(theta, dtype=float), True)[1]

    def log_prior(self, theta) -> float:
        blocks = self.layout.split(np.asarray(theta, dtype=float))
        return hierarchy_forward(blocks, self.spec, self.layout).lp

    def log_likelihood(self, theta) -> float:
        blocks = self.layout.split(np.asarray(theta, dtype=float))
        fwd = hierarchy_forward(blocks, self.spec, self.layout)
        return self._likelihood(blocks, fwd.W, False)[0]

    def _likelihood(self, blocks, W1, need_grad):
        X, Y = self.X, self.Y
        network = self.model.is_network
        if network:
            W_L = blocks["W_L"]
            hidden = np.tanh(X @ W1.T + blocks["b1"])
            F = hidden @ W_L + blocks["b_L"]
        else:
            F = X @ W1.T + blocks["b_L"]
        grads = {}
        if self.model.task == "regression":
            log_sigma = float(blocks["log_sigma"])
            inv_var = math.exp(-2.0 * log_sigma)
            R = Y - F
            rss = float(np.sum(R * R))
            count = R.size
            ll = -count * (0.5 * LOG_2PI + log_sigma) - 0.5 * rss * inv_var
            if not need_grad:
                return ll, None
            gF = R * inv_var
            grads["log_sigma"] = -count + rss * inv_var
        else:
            ll = float(np.sum(Y * F - np.logaddexp(0.0, F)))
            if not need_grad:
                return ll, None
            gF = Y - special.expit(F)
        if network:
            grads["W_L"] = hidden.T @ gF
            grads["b_L"] = gF.sum(axis=0)
            gA = (gF @ W_L.T) * (1.0 - hidden * hidden)
            grads["W1"] = gA.T @ X
            grads["b1"] = gA.sum(axis=0)
        else:
            grads["W1"] = gF.T @ X
            grads["b_L"] = gF.sum(axis=0)
        return ll, grads

    def _evaluate(self, theta, need_grad):
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                return self._evaluate_unguarded(theta, need_grad)
        except OverflowError:
            # extreme states met during step-size search or divergent trajectories
            return -math.inf, (np.zeros(self.dim) if need_grad else None)

    def _evaluate_unguarded(self, theta, need_grad):
        blocks = self.layout.split(theta)
        fwd = hierarchy_forward(blocks, self.spec, self.layout)
        ll, lgrads = self._likelihood(blocks, fwd.W, need_grad)
        lp = fwd.lp + ll
        if not need_grad:
            return lp, None
        if not math.isfinite(lp):
            return -math.inf, np.zeros(self.dim)
        grads = hierarchy_backward(lgrads.pop("W1"), blocks, self.spec, self.layout, fwd)
        for name, g in lgrads.items():
            grads[name] = grads[name] + g
        out = np.empty(self.dim)
        for name, (sl, _) in self.layout.slices.items():
            out[sl] = np.ravel(grads[name])
        if not np.all(np.isfinite(out)):
            return -math.inf, np.zeros(self.dim)
        return lp, out


def log_likelihood(params, X, y, model: Model) -> float:
    return Posterior(model, X, y).log_likelihood(_as_theta(params))


def log_posterior(params, X, y, model: Model) -> float:
    return Posterior(model, X, y).log_density(_as_theta(params))


def grad_log_posterior(params, X, y, model: Model) -> np.ndarray:
    return Posterior(model, X, y).gradient(_as_theta(params))


def draw_weights(draws, model: Model) -> list[NetworkWeights]:
    """Constrained weights of every row of a (M, dim) draw matrix or a Trace."""
    flat = draws.flat() if hasattr(draws, "flat") and callable(draws.flat) else np.atleast_2d(draws)
    return [unpack_weights(theta, model) for theta in flat]


def draw_sigmas(draws, model: Model) -> np.ndarray | None:
    if model.task != "regression":
        return None
    flat = draws.flat() if hasattr(draws, "flat") and callable(draws.flat) else np.atleast_2d(draws)
    sl = model.layout.slices["log_sigma"][0]
    return np.exp(flat[:, sl].reshape(-1))


def predict_weights(X, weights: list[NetworkWeights], task: str = "regression") -> np.ndarray:
    """(M, n) outputs, or class-1 probabilities for classification."""
    F = np.stack([forward_weights(X, w)[:, 0] for w in weights])
    return special.expit(F) if task == "binary_classification" else F
