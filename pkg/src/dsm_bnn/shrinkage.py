"""Scalar shrinkage factors: prior densities, moments and variance-component dependence.

Every expectation over the Beta-distributed allocation has two routes: a
closed form in terms of hypergeometric functions, and adaptive
Gauss-Kronrod quadrature against the Beta weight, which is the reference
and the fallback whenever the closed form does not apply.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, special, stats

from .specfun import NonConvergenceError, hyp2f1, hyp3f2, ln_beta, ln_pochhammer

KAPPA_EPS = 1e-9
QUAD_EPSREL = 1e-11
QUAD_LIMIT = 200
# logit range for normalization; the hypergeometric argument stays below ~1e260
LOGIT_SPAN = 600.0
METHODS = ("auto", "closed", "quadrature")


@dataclass(frozen=True)
class ShrinkageContext:
    """Fixed data strength ``z``, Dirichlet concentration ``alpha``, group size ``p`` and
    degrees of freedom ``nu`` of the local-scale prior."""

    z: float
    alpha: float = 1.0
    p: int = 1
    nu: float = 1.0

    def __post_init__(self):
        if not self.z > 0:
            raise ValueError("z must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if int(self.p) != self.p or self.p < 1:
            raise ValueError("p must be an integer >= 1")
        if not self.nu > 0:
            raise ValueError("nu must be positive")

    @property
    def beta(self) -> float:
        """Second parameter of the marginal Beta law of one allocation component."""
        return (self.p - 1) * self.alpha


@dataclass(frozen=True)
class DependenceInputs:
    """Group size, concentration and the first two moments of the regularized local scale."""

    p: int
    alpha: float
    mean: float
    variance: float

    def __post_init__(self):
        if self.p < 1 or not self.alpha > 0:
            raise ValueError("need p >= 1 and alpha > 0")
        if self.variance < 0:
            raise ValueError("variance must be non-negative")

    @property
    def cv_squared(self) -> float:
        return self.variance / self.mean ** 2

    @property
    def threshold(self) -> float:
        return 1.0 / (self.p * self.alpha)


@dataclass(frozen=True)
class MonteCarloEstimate:
    estimate: float
    se: float
    draws: int


def _check_method(method):
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")


def _check_open_unit(kappa):
    k = np.asarray(kappa, dtype=float)
    if np.any(~(k > 0.0)) or np.any(~(k < 1.0)):
        raise ValueError("kappa must lie strictly inside (0, 1)")
    return k


def _log_parts(kappa):
    k = _check_open_unit(kappa)
    return np.log(k), np.log1p(-k)


def _logit_parts(u):
    # log kappa and log(1 - kappa) at kappa = expit(u), both without cancellation
    u = np.asarray(u, dtype=float)
    return -np.logaddexp(0.0, -u), -np.logaddexp(0.0, u)


def kappa(z, lambda_sq, xi=1.0):
    """Shrinkage factor 1 / (1 + z^2 lambda^2 xi)."""
    z, lambda_sq, xi = (np.asarray(v, dtype=float) for v in (z, lambda_sq, xi))
    if np.any(z < 0) or np.any(lambda_sq < 0) or np.any(xi < 0):
        raise ValueError("inputs must be non-negative")
    out = 1.0 / (1.0 + z * z * lambda_sq * xi)
    return float(out) if out.ndim == 0 else out


def regularized_kappa(kappa_value, b):
    """Affine shift (1 - b) kappa + b from slab truncation."""
    k, b = np.asarray(kappa_value, dtype=float), np.asarray(b, dtype=float)
    if np.any((k < 0) | (k > 1)) or np.any((b < 0) | (b > 1)):
        raise ValueError("kappa and b must lie in [0, 1]")
    out = (1.0 - b) * k + b
    return float(out) if out.ndim == 0 else out


def m_eff_scalar(kappas) -> float:
    """Effective number of nonzero coefficients, sum of (1 - kappa)."""
    k = np.asarray(kappas, dtype=float)
    if np.any((k < 0) | (k > 1)):
        raise ValueError("kappa values must lie in [0, 1]")
    return float(np.sum(1.0 - k))


# --------------------------------------------------------------------------
# densities

def _student_log_const(nu):
    return (special.gammaln(0.5 * (nu + 1)) - special.gammaln(0.5 * nu)
            - 0.5 * math.log(nu * math.pi) + 0.5 * (nu + 1) * math.log(nu))


def _student_log_density(log_k, log_1mk, z, nu):
    log_s = log_k - log_1mk + math.log(nu * z * z)
    return (_student_log_const(nu) + nu * math.log(z) + (0.5 * nu - 1.0) * log_k
            - (0.5 * nu + 1.0) * log_1mk - 0.5 * (nu + 1) * np.logaddexp(0.0, log_s))


def _unwrap(out):
    return float(out) if np.ndim(out) == 0 else out


def horseshoe_kappa_density(kappa_value, z):
    """Prior density of kappa under a half-Cauchy local scale."""
    if not z > 0:
        raise ValueError("z must be positive")
    k = _check_open_unit(kappa_value)
    out = z / (math.pi * ((z * z - 1.0) * k + 1.0) * np.sqrt(k) * np.sqrt(1.0 - k))
    return _unwrap(out)


def student_kappa_density(kappa_value, z, nu):
    """Prior density of kappa under a half-Student-t local scale with ``nu`` degrees of freedom."""
    if not (z > 0 and nu > 0):
        raise ValueError("z and nu must be positive")
    log_k, log_1mk = _log_parts(kappa_value)
    return _unwrap(np.exp(_student_log_density(log_k, log_1mk, z, nu)))


def _dsm_log_density_one(log_k, log_1mk, ctx: ShrinkageContext, method):
    nu, z = ctx.nu, ctx.z
    if ctx.p == 1:
        return float(_student_log_density(log_k, log_1mk, z, nu))
    s = math.exp(log_k - log_1mk) * nu * z * z
    base = (_student_log_const(nu) + nu * math.log(z) + (0.5 * nu - 1.0) * log_k
            - (0.5 * nu + 1.0) * log_1mk)
    expect = beta_expectation_I(0.5 * nu, 0.5 * (nu + 1), s, ctx.alpha, ctx.beta, method=method)
    return base + math.log(expect) if expect > 0 else -math.inf


def dsm_kappa_log_density(kappa_value, ctx: ShrinkageContext, method: str = "closed"):
    """Log prior density of kappa when the local scale is split by a Dirichlet allocation."""
    _check_method(method)
    log_k, log_1mk = _log_parts(kappa_value)
    out = np.vectorize(lambda a, b: _dsm_log_density_one(a, b, ctx, method), otypes=[float])(log_k, log_1mk)
    return _unwrap(out)


def dsm_kappa_density(kappa_value, ctx: ShrinkageContext, method: str = "closed"):
    """Prior density of kappa under a Dirichlet-allocated Student-t (or horseshoe) local scale.

    ``method="closed"`` uses the hypergeometric closed form and raises
    :class:`NonConvergenceError` if it cannot be evaluated; ``"quadrature"``
    integrates the conditional density against the Beta marginal.
    """
    return _unwrap(np.exp(dsm_kappa_log_density(kappa_value, ctx, method)))


def dsm_kappa_density_nu1(kappa_value, ctx: ShrinkageContext):
    """Dedicated horseshoe-case (nu = 1) form of :func:`dsm_kappa_density`."""
    if ctx.nu != 1:
        raise ValueError("this form requires nu = 1")
    k = _check_open_unit(kappa_value)
    z, alpha, p = ctx.z, ctx.alpha, ctx.p
    ratio = math.exp(ln_pochhammer(alpha, 0.5) - ln_pochhammer(p * alpha, 0.5))

    def one(kv):
        F = hyp2f1(1.0, alpha + 0.5, p * alpha + 0.5, -kv * z * z / (1.0 - kv)).require()
        return z / (math.pi * (1.0 - kv) * math.sqrt(kv) * math.sqrt(1.0 - kv)) * ratio * F

    return _unwrap(np.vectorize(one, otypes=[float])(k))


def dsm_kappa_density_logit(u, ctx: ShrinkageContext, method: str = "closed"):
    """Density of logit(kappa): p(kappa) kappa (1 - kappa) at kappa = expit(u).

    Stays accurate where kappa is within rounding of 0 or 1, which matters for
    small ``alpha`` where a sizeable share of the mass sits next to kappa = 1.
    """
    _check_method(method)
    log_k, log_1mk = _logit_parts(u)
    f = np.vectorize(lambda a, b: math.exp(_dsm_log_density_one(a, b, ctx, method) + a + b), otypes=[float])
    return _unwrap(f(log_k, log_1mk))


def student_kappa_density_logit(u, z, nu):
    log_k, log_1mk = _logit_parts(u)
    return _unwrap(np.exp(_student_log_density(log_k, log_1mk, z, nu) + log_k + log_1mk))


def integrate_logit_density(density_logit: Callable, lo: float = 0.0, hi: float = 1.0) -> float:
    """Integral of a logit-space density between kappa = lo and kappa = hi."""
    u_lo = -LOGIT_SPAN if lo <= 0.0 else float(special.logit(lo))
    u_hi = LOGIT_SPAN if hi >= 1.0 else float(special.logit(hi))
    total = 0.0
    # split at 0 and at the moderate tails so quad does not miss narrow peaks
    cuts = [u_lo, *[c for c in (-20.0, -5.0, 0.0, 5.0, 20.0) if u_lo < c < u_hi], u_hi]
    for a, b in zip(cuts[:-1], cuts[1:]):
        val, _ = integrate.quad(density_logit, a, b, epsabs=1e-13, epsrel=1e-10, limit=QUAD_LIMIT)
        total += val
    return total


def dsm_kappa_cdf(kappa_value, ctx: ShrinkageContext, method: str = "closed") -> float:
    """Prior CDF of kappa by logit-space quadrature of the density."""
    k = float(kappa_value)
    if k <= 0:
        return 0.0
    if k >= 1:
        return 1.0
    return integrate_logit_density(lambda u: dsm_kappa_density_logit(u, ctx, method), 0.0, k)


def kappa_density_table(contexts, grid) -> list[dict]:
    """Rows (label, family, kappa, density) over a kappa grid for plotting."""
    grid = np.clip(np.asarray(grid, dtype=float), KAPPA_EPS, 1.0 - KAPPA_EPS)
    rows = []
    for label, ctx in contexts:
        if label == "horseshoe":
            vals = horseshoe_kappa_density(grid, ctx.z)
        elif label == "student":
            vals = student_kappa_density(grid, ctx.z, ctx.nu)
        else:
            vals = dsm_kappa_density(grid, ctx)
        for k, v in zip(grid, np.atleast_1d(vals)):
            rows.append({"prior": label, "z": ctx.z, "alpha": ctx.alpha, "p": ctx.p,
                         "nu": ctx.nu, "kappa": float(k), "density": float(v)})
    return rows


def logit_tail_span(density_logit: Callable, tail: float = 1e-4, start: float = 20.0) -> float:
    """Smallest doubling of ``start`` (capped at the logit span) leaving under ``tail`` mass per side."""
    U = start
    while U < LOGIT_SPAN:
        upper = integrate.quad(density_logit, U, LOGIT_SPAN, limit=QUAD_LIMIT)[0]
        lower = integrate.quad(density_logit, -LOGIT_SPAN, -U, limit=QUAD_LIMIT)[0]
        if upper < tail and lower < tail:
            return U
        U = min(2.0 * U, LOGIT_SPAN)
    return LOGIT_SPAN


def kappa_density_table_logit(contexts, grid_size: int = 801, tail: float = 1e-4) -> list[dict]:
    """Rows on a uniform logit(kappa) grid wide enough to hold all but ``tail`` mass per side.

    ``density_logit`` is the density of logit(kappa); a trapezoid rule over
    ``u`` integrates it to one. ``density`` is the kappa-scale value.
    """
    rows = []
    for label, ctx in contexts:
        f = lambda u, c=ctx: dsm_kappa_density_logit(u, c)
        U = logit_tail_span(f, tail)
        for u in np.linspace(-U, U, grid_size):
            g = float(f(u))
            log_k, log_1mk = _logit_parts(u)
            rows.append({"prior": label, "z": ctx.z, "alpha": ctx.alpha, "p": ctx.p, "nu": ctx.nu,
                         "u": float(u), "kappa": float(special.expit(u)), "density_logit": g,
                         "density": float(g * math.exp(-(log_k + log_1mk)))})
    return rows


# --------------------------------------------------------------------------
# Beta expectations

def _beta_quad(transform: Callable, k, alpha, beta, knee: float | None = None) -> float:
    """E[xi^k transform(xi)] for xi ~ Beta(alpha, beta) with endpoint-weighted quadrature.

    QUADPACK's algebraic weight attaches to the ends of the integration
    interval, so each half carries only the singular factor of its own end.
    ``knee`` marks where the transform bends on the left half.
    """
    a_exp, b_exp = k + alpha - 1.0, beta - 1.0
    left = lambda x: transform(x) * (1.0 - x) ** b_exp
    opts = dict(epsabs=0.0, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
    edge = 0.5 if knee is None or not 0.0 < knee < 0.5 else knee
    total, _ = integrate.quad(left, 0.0, edge, weight="alg", wvar=(a_exp, 0.0), **opts)
    if edge < 0.5:
        total += integrate.quad(lambda x: left(x) * x ** a_exp, edge, 0.5,
                                points=[min(10 * edge, 0.25)] if 10 * edge < 0.5 else None,
                                **opts)[0]
    total += integrate.quad(lambda x: transform(x) * x ** a_exp, 0.5, 1.0, weight="alg",
                            wvar=(0.0, b_exp), **opts)[0]
    return total / math.exp(ln_beta(alpha, beta))


def _check_beta_args(k, s, alpha, beta):
    if not (alpha > 0 and beta > 0):
        raise ValueError("alpha and beta must be positive")
    if not s > -1:
        raise ValueError("s must exceed -1")
    if not k > -alpha:
        raise ValueError("k must exceed -alpha")


def _poch_ratio(alpha, beta, k) -> float:
    return math.exp(ln_pochhammer(alpha, k) - ln_pochhammer(alpha + beta, k))


def beta_expectation_I(k, a, s, alpha, beta, method: str = "auto") -> float:
    """E[xi^k / (1 + s xi)^a] for xi ~ Beta(alpha, beta)."""
    _check_method(method)
    _check_beta_args(k, s, alpha, beta)
    if method != "quadrature":
        res = hyp2f1(a, alpha + k, alpha + beta + k, -s)
        if res.converged:
            return _poch_ratio(alpha, beta, k) * res.value
        if method == "closed":
            raise NonConvergenceError(f"closed form unavailable at s={s}")
    return _beta_quad(lambda x: (1.0 + s * x) ** (-a), k, alpha, beta,
                      knee=1.0 / s if s > 2 else None)


def beta_expectation_II(k, a, s, alpha, beta, method: str = "auto") -> float:
    """E[xi^k / (1 + s sqrt(xi))^a] for xi ~ Beta(alpha, beta).

    The closed form splits the binomial series into even and odd powers of s
    and needs |s| < 1; outside that range quadrature is used.
    """
    _check_method(method)
    _check_beta_args(k, s, alpha, beta)
    if s == 0:
        return _poch_ratio(alpha, beta, k)
    if method != "quadrature":
        if abs(s) < 1:
            c = alpha + beta + k
            even = hyp3f2(0.5 * a, 0.5 * (a + 1), alpha + k, 0.5, c, s * s)
            odd = hyp3f2(0.5 * (a + 1), 0.5 * (a + 2), alpha + k + 0.5, 1.5, c + 0.5, s * s)
            if even.converged and odd.converged:
                half = math.exp(ln_pochhammer(alpha + k, 0.5) - ln_pochhammer(c, 0.5))
                return _poch_ratio(alpha, beta, k) * (even.value - s * a * half * odd.value)
        if method == "closed":
            raise NonConvergenceError(f"closed form needs |s| < 1, got s={s}")
    return _beta_quad(lambda x: (1.0 + s * math.sqrt(x)) ** (-a), k, alpha, beta,
                      knee=1.0 / (s * s) if s > 2 else None)


def _sqrt_expectation(k, a, ctx: ShrinkageContext, method) -> float:
    # E[xi^k / (1 + z sqrt(xi))^a] with the degenerate p = 1 allocation handled directly
    if ctx.p == 1:
        return (1.0 + ctx.z) ** (-a)
    return beta_expectation_II(k, a, ctx.z, ctx.alpha, ctx.beta, method=method)


def _require_horseshoe(ctx):
    if ctx.nu != 1:
        raise ValueError("closed-form moments are available for nu = 1 only")


def dsm_kappa_mean(ctx: ShrinkageContext, method: str = "auto") -> float:
    """Prior mean of kappa for the Dirichlet horseshoe."""
    _require_horseshoe(ctx)
    _check_method(method)
    if ctx.p > 1 and method != "quadrature" and ctx.z < 1:
        z, alpha, pa = ctx.z, ctx.alpha, ctx.p * ctx.alpha
        first = hyp2f1(1.0, alpha, pa, z * z)
        second = hyp2f1(1.0, alpha + 0.5, pa + 0.5, z * z)
        if first.converged and second.converged:
            ratio = math.exp(ln_pochhammer(alpha, 0.5) - ln_pochhammer(pa, 0.5))
            return first.value - z * ratio * second.value
    if method == "closed" and ctx.z >= 1:
        raise NonConvergenceError("closed-form mean needs z < 1")
    return _sqrt_expectation(0.0, 1.0, ctx, "quadrature" if method == "quadrature" else "auto")


def dsm_kappa_variance(ctx: ShrinkageContext, method: str = "auto") -> float:
    """Prior variance of kappa for the Dirichlet horseshoe.

    Law of total variance over the allocation: E[z sqrt(xi) / (2 (1 + z sqrt(xi))^2)]
    plus the variance of 1 / (1 + z sqrt(xi)).
    """
    _require_horseshoe(ctx)
    _check_method(method)
    if method == "closed" and ctx.z >= 1:
        raise NonConvergenceError("closed-form variance needs z < 1")
    inner = "quadrature" if method == "quadrature" else "auto"
    z = ctx.z
    e_half_sq = _sqrt_expectation(0.5, 2.0, ctx, inner)
    e_sq = _sqrt_expectation(0.0, 2.0, ctx, inner)
    e_one = _sqrt_expectation(0.0, 1.0, ctx, inner)
    return 0.5 * z * e_half_sq + e_sq - e_one * e_one


# --------------------------------------------------------------------------
# dependence among variance components

def variance_component_covariance(inputs: DependenceInputs) -> float:
    """Covariance of two distinct variance components lambda~^2 xi_k and lambda~^2 xi_l."""
    p, alpha = inputs.p, inputs.alpha
    pa = p * alpha
    return (pa * inputs.variance - inputs.mean ** 2) / (p * p * (pa + 1.0))


def covariance_sign(inputs: DependenceInputs, rtol: float = 1e-12) -> int:
    """-1, 0 or +1 according to CV^2 of lambda~^2 against the threshold 1 / (p alpha)."""
    lhs = inputs.p * inputs.alpha * inputs.variance
    rhs = inputs.mean ** 2
    if abs(lhs - rhs) <= rtol * max(abs(lhs), abs(rhs)):
        return 0
    return 1 if lhs > rhs else -1


def regularized_local_sq(lam, c_sq, tau):
    """lambda~^2 = c^2 lambda^2 / (c^2 + tau^2 lambda^2); infinite c^2 gives lambda^2."""
    lam_sq = np.asarray(lam, dtype=float) ** 2
    if math.isinf(c_sq):
        return lam_sq
    return c_sq * lam_sq / (c_sq + tau * tau * lam_sq)


def cv_squared_mc(scale_prior_sampler: Callable, c_sq_value: float, tau: float = 1.0,
                  draws: int = 100_000, seed=None, batches: int = 50) -> MonteCarloEstimate:
    """Monte Carlo CV^2 of the regularized local scale at fixed (c^2, tau).

    ``scale_prior_sampler(rng, n)`` returns n draws of lambda. The standard
    error is the spread of the estimate over equal batches.
    """
    if draws < 10_000:
        raise ValueError("need at least 10^4 draws")
    rng = np.random.default_rng(seed)
    lt = regularized_local_sq(scale_prior_sampler(rng, draws), c_sq_value, tau)

    def cv2(x):
        m = x.mean()
        return float(x.var() / (m * m)) if m > 0 else 0.0

    estimate = cv2(lt)
    per = draws // batches
    parts = [cv2(lt[i * per:(i + 1) * per]) for i in range(batches)]
    se = float(np.std(parts, ddof=1) / math.sqrt(batches))
    return MonteCarloEstimate(estimate, se, draws)


def half_t_sampler(nu: float = 1.0, scale: float = 1.0) -> Callable:
    return lambda rng, n: scale * np.abs(rng.standard_t(nu, size=n))


def half_normal_sampler(scale: float = 1.0) -> Callable:
    return lambda rng, n: scale * np.abs(rng.standard_normal(n))


def gamma_sq_sampler(shape: float, rate: float = 0.5) -> Callable:
    """lambda with lambda^2 ~ Gamma(shape, rate)."""
    return lambda rng, n: np.sqrt(rng.gamma(shape, 1.0 / rate, size=n))


SCALE_PRIORS = {
    "half_cauchy": lambda value: half_t_sampler(1.0, value),
    "half_t": lambda value: half_t_sampler(value, 1.0),
    "half_normal": lambda value: half_normal_sampler(value),
    "gamma_sq": lambda value: gamma_sq_sampler(value),
}


def c_sq_reference_points(slab_df: float = 4.0, slab_scale_sq: float = 2.0,
                          large: float = 1e8) -> dict:
    """Prior median and 0.9 quantile of c^2 ~ InvGamma(df/2, df s^2/2), plus a near-unregularized value."""
    law = stats.invgamma(0.5 * slab_df, scale=0.5 * slab_df * slab_scale_sq)
    return {"median": float(law.median()), "q90": float(law.ppf(0.9)), "large": float(large)}


def dispersion_sweep(prior: str, values, p: int, alpha: float, c_sq_points: dict | None = None,
                     tau: float = 1.0, draws: int = 100_000, seed=0) -> list[dict]:
    """CV^2 estimates over a tail parameter grid at each reference c^2, with the sign regime."""
    if prior not in SCALE_PRIORS:
        raise ValueError(f"unknown scale prior {prior!r}; choose from {sorted(SCALE_PRIORS)}")
    points = c_sq_points or c_sq_reference_points()
    threshold = 1.0 / (p * alpha)
    ss = np.random.SeedSequence(seed)
    rows = []
    for (label, c_sq), child in zip(points.items(), ss.spawn(len(points))):
        for value, grandchild in zip(values, child.spawn(len(values))):
            est = cv_squared_mc(SCALE_PRIORS[prior](value), c_sq, tau, draws, grandchild)
            rows.append({"prior": prior, "parameter": float(value), "c_sq_point": label,
                         "c_sq": c_sq, "cv_squared": est.estimate, "se": est.se,
                         "threshold": threshold,
                         "regime": "positive" if est.estimate > threshold else "negative"})
    return rows
