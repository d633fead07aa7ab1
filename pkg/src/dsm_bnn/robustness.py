"""FGSM attacks on posterior network draws and the robustness (p1) and safety (p2) estimates.

Each draw is attacked at its own single-step FGSM point inside the
l-infinity ball, so both estimates are lower bounds on the probabilities
over the whole ball.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .bnn import NetworkWeights

SAFE, PARTIAL, UNSAFE = "safe", "partially_safe", "unsafe"


@dataclass(frozen=True)
class AttackConfig:
    """l-infinity radius, thresholds as fractions of it, and the evaluation subset."""

    epsilon: float
    delta_fractions: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    subset_size: int = 100
    n_draws: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be non-negative")
        fr = np.asarray(self.delta_fractions, dtype=float)
        if fr.size == 0 or np.any(fr <= 0) or np.any(fr > 1):
            raise ValueError("delta fractions must lie in (0, 1]")
        if self.subset_size < 1 or self.n_draws < 1:
            raise ValueError("subset_size and n_draws must be positive")
        object.__setattr__(self, "delta_fractions", tuple(float(v) for v in fr))

    @property
    def deltas(self) -> np.ndarray:
        return self.epsilon * np.asarray(self.delta_fractions)


def _logit_and_input_grad(weights: NetworkWeights, X: np.ndarray):
    """Output logits (n,) and their gradients with respect to the inputs (n, p)."""
    if weights.W_L is None:
        f = X @ weights.W1[0] + weights.b_L[0]
        return f, np.broadcast_to(weights.W1[0], X.shape)
    hidden = np.tanh(X @ weights.W1.T + weights.b1)
    f = hidden @ weights.W_L[:, 0] + weights.b_L[0]
    grad = ((1.0 - hidden * hidden) * weights.W_L[:, 0]) @ weights.W1
    return f, grad


def class_probability(weights: NetworkWeights, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return special.expit(_logit_and_input_grad(weights, X)[0])


def fgsm(weights: NetworkWeights, X, y, epsilon: float) -> np.ndarray:
    """x + epsilon * sign(d CE / dx) for a Bernoulli-logit network draw."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    f, grad_f = _logit_and_input_grad(weights, X)
    # d CE / d f = sigmoid(f) - y
    grad = (special.expit(f) - y)[:, None] * grad_f
    return X + epsilon * np.sign(grad)


def _reference_labels(weights, X):
    return (class_probability(weights, X) >= 0.5).astype(float)


@dataclass
class AttackOutcome:
    """Per-draw, per-point attack results at one radius."""

    epsilon: float
    q_clean: np.ndarray  # (M, n)
    q_adv: np.ndarray  # (M, n)

    @property
    def deviation(self) -> np.ndarray:
        # l2 distance of the two-class softmax vectors (q, 1-q)
        return math.sqrt(2.0) * np.abs(self.q_adv - self.q_clean)

    @property
    def label_changed(self) -> np.ndarray:
        return (self.q_adv >= 0.5) != (self.q_clean >= 0.5)


def attack(weights: list[NetworkWeights], X, epsilon: float, labels=None) -> AttackOutcome:
    """FGSM every point against every draw.

    Without ``labels`` each draw attacks its own predicted label at x*.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    q_clean, q_adv = [], []
    for w in weights:
        y = _reference_labels(w, X) if labels is None else np.asarray(labels, dtype=float)
        q_clean.append(class_probability(w, X))
        q_adv.append(class_probability(w, fgsm(w, X, y, epsilon)))
    return AttackOutcome(float(epsilon), np.array(q_clean), np.array(q_adv))


def estimate_p1(weights: list[NetworkWeights], x_star, config: AttackConfig, deltas=None,
                labels=None) -> np.ndarray:
    """Fraction of draws whose prediction moves by at least delta, per test point and delta.

    Returns shape (n_points, n_deltas). ``deltas`` defaults to the config's
    fractions of epsilon.
    """
    deltas = config.deltas if deltas is None else np.asarray(deltas, dtype=float)
    out = attack(weights, x_star, config.epsilon, labels)
    dev = out.deviation
    return np.stack([(dev >= d).mean(axis=0) for d in deltas], axis=1)


def classify_safety(fraction) -> np.ndarray:
    fraction = np.asarray(fraction, dtype=float)
    return np.where(fraction == 0.0, SAFE, np.where(fraction == 1.0, UNSAFE, PARTIAL))


@dataclass
class SafetyEstimate:
    fraction: np.ndarray
    label: np.ndarray = field(init=False)

    def __post_init__(self):
        self.label = classify_safety(self.fraction)

    def table(self) -> dict:
        n = self.label.size
        return {name: float(np.sum(self.label == name) / n) for name in (SAFE, PARTIAL, UNSAFE)}


def estimate_p2(weights: list[NetworkWeights], x_star, config: AttackConfig, labels=None) -> SafetyEstimate:
    """Fraction of draws whose label flips at their FGSM point, and its safety bin."""
    out = attack(weights, x_star, config.epsilon, labels)
    return SafetyEstimate(out.label_changed.mean(axis=0))


def select_subset(n_points: int, config: AttackConfig) -> np.ndarray:
    rng = np.random.default_rng(config.seed)
    size = min(config.subset_size, n_points)
    return np.sort(rng.choice(n_points, size=size, replace=False))


def select_draws(weights: list, config: AttackConfig) -> list:
    """Evenly spaced draws, at most ``config.n_draws``."""
    if len(weights) <= config.n_draws:
        return list(weights)
    idx = np.linspace(0, len(weights) - 1, config.n_draws).round().astype(int)
    return [weights[i] for i in idx]


def robustness_tables(weights: list[NetworkWeights], X_test, epsilons, base: AttackConfig):
    """p1 curve rows (epsilon, delta_fraction, p1) and safety rows (epsilon, safe, partial, unsafe)."""
    idx = select_subset(np.atleast_2d(X_test).shape[0], base)
    X = np.atleast_2d(X_test)[idx]
    draws = select_draws(weights, base)
    p1_rows, p2_rows = [], []
    for eps in epsilons:
        cfg = AttackConfig(float(eps), base.delta_fractions, base.subset_size, base.n_draws, base.seed)
        out = attack(draws, X, cfg.epsilon)
        dev = out.deviation
        for frac, d in zip(cfg.delta_fractions, cfg.deltas):
            p1_rows.append({"epsilon": cfg.epsilon, "delta_fraction": frac,
                            "p1": float((dev >= d).mean(axis=0).mean())})
        table = SafetyEstimate(out.label_changed.mean(axis=0)).table()
        p2_rows.append({"epsilon": cfg.epsilon, **table})
    return p1_rows, p2_rows
