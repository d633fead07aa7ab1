"""Special functions behind the shrinkage-factor densities.

Log-gamma, log-beta and Pochhammer symbols (integer and half-integer order),
plus the Gauss hypergeometric function 2F1 and the generalized 3F2 evaluated
by direct series summation, the Pfaff transformation or Euler's integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

MAX_TERMS = 10_000
SERIES_RTOL = 1e-15
SMALL_TERM_STREAK = 3

# Stirling coefficients B_2k / (2k (2k-1)) for k = 1..8
_STIRLING = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
    -3617.0 / 122400.0,
)
_STIRLING_MIN_X = 10.0


class NonConvergenceError(ArithmeticError):
    """Raised when a special-function value is requested but was not obtained."""


@dataclass(frozen=True)
class HypergeometricResult:
    value: float
    converged: bool
    terms_used: int
    method: str  # "series", "pfaff_transform" or "euler_integral"

    def require(self) -> float:
        """Return the value, raising if the evaluation did not converge."""
        if not self.converged:
            raise NonConvergenceError(
                f"hypergeometric evaluation did not converge (method={self.method}, "
                f"terms={self.terms_used})"
            )
        return self.value


# ln Gamma(1 + e) = sum_k c_k e^k with c_1 = -euler_gamma, c_k = (-1)^k zeta(k) / k
_LNGAMMA_TAYLOR = np.concatenate([[0.0, -np.euler_gamma],
                                  [(-1) ** k * special.zeta(k) / k for k in range(2, 34)]])
_TAYLOR_RADIUS = 0.25


def _ln_gamma_near_one(e):
    out = np.zeros_like(e)
    for c in _LNGAMMA_TAYLOR[:0:-1]:
        out = (out + c) * e
    return out


def ln_gamma(x):
    """Natural log of the gamma function for positive arguments.

    Near the roots at 1 and 2 a Taylor series keeps full relative accuracy.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("ln_gamma requires x > 0")
    out = special.gammaln(arr)
    e1, e2 = arr - 1.0, arr - 2.0
    near1 = np.abs(e1) < _TAYLOR_RADIUS
    near2 = np.abs(e2) < _TAYLOR_RADIUS
    if np.any(near1) or np.any(near2):
        out = np.where(near1, _ln_gamma_near_one(np.where(near1, e1, 0.0)), out)
        out = np.where(near2, _ln_gamma_near_one(np.where(near2, e2, 0.0)) + np.log1p(np.where(near2, e2, 0.0)), out)
    return float(out) if out.ndim == 0 else out


def ln_beta(a, b):
    """Natural log of the beta function B(a, b) for positive arguments."""
    a_arr, b_arr = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if np.any(~(a_arr > 0)) or np.any(~(b_arr > 0)):
        raise ValueError("ln_beta requires a > 0 and b > 0")
    out = special.betaln(a_arr, b_arr)
    return float(out) if out.ndim == 0 else out


def _is_integer(n: float) -> bool:
    return float(n) == math.floor(n)


def _is_nonpositive_integer(x: float) -> bool:
    return x <= 0 and _is_integer(x)


def _rising_product(x: float, n: int) -> float:
    out = 1.0
    for i in range(n):
        out *= x + i
    return out


def _ln_rising_product(x: float, n: int) -> float:
    return float(np.sum(np.log(x + np.arange(n, dtype=float))))


def _ln_gamma_ratio_stirling(x: float, h: float) -> float:
    # ln G(x+h) - ln G(x) for x >= _STIRLING_MIN_X without cancellation
    out = h * math.log(x) + (x + h - 0.5) * math.log1p(h / x) - h
    xh = x + h
    out += _STIRLING[0] * (-h / (x * xh))
    for k, coef in enumerate(_STIRLING[1:], start=2):
        power = 2 * k - 1
        out += coef * (xh**-power - x**-power)
    return out


def ln_pochhammer(x: float, n: float) -> float:
    """log of (x)_n = Gamma(x+n)/Gamma(x) for x > 0 and n >= 0."""
    if x <= 0:
        raise ValueError("ln_pochhammer requires x > 0")
    if n < 0:
        raise ValueError("ln_pochhammer requires n >= 0")
    if n == 0:
        return 0.0
    if _is_integer(n) and n <= 64:
        return _ln_rising_product(x, int(n))
    if x >= _STIRLING_MIN_X:
        return _ln_gamma_ratio_stirling(x, n)
    # shift x past the Stirling threshold: (x)_n = (x)_m (x+m)_n / (x+n)_m
    m = int(math.ceil(_STIRLING_MIN_X - x))
    return (
        _ln_rising_product(x, m)
        + _ln_gamma_ratio_stirling(x + m, n)
        - _ln_rising_product(x + n, m)
    )


def pochhammer(x: float, n: float) -> float:
    """Rising factorial (x)_n for integer or half-integer n >= 0."""
    if n < 0 or not _is_integer(2.0 * n):
        raise ValueError("pochhammer order must be a nonnegative integer or half-integer")
    if _is_integer(n):
        k = int(n)
        if x > 0 and k > 64:
            return math.exp(ln_pochhammer(x, n))
        return _rising_product(x, k)
    if x <= 0:
        raise ValueError("pochhammer with half-integer order requires x > 0")
    return math.exp(ln_pochhammer(x, n))


def _series(numer, denom, z: float, max_terms: int):
    """Sum the generalized hypergeometric series; returns (value, converged, terms)."""
    term = 1.0
    total = 1.0
    streak = 0
    for n in range(max_terms - 1):
        num = z
        for a in numer:
            num *= a + n
        den = float(n + 1)
        for b in denom:
            den *= b + n
        term *= num / den
        total += term
        if term == 0.0:
            return total, True, n + 2
        if abs(term) < SERIES_RTOL * abs(total):
            streak += 1
            if streak >= SMALL_TERM_STREAK:
                return total, True, n + 2
        else:
            streak = 0
        if not math.isfinite(total):
            return total, False, n + 2
    return total, False, max_terms


def _series_hopeless(z: float, numer, max_terms: int) -> bool:
    # geometric decay |z|^n cannot reach the tolerance within the cap
    if any(_is_nonpositive_integer(a) for a in numer):
        return False
    return abs(z) ** max_terms > SERIES_RTOL


def _euler_integral(a: float, b: float, c: float, z: float, rtol: float = 1e-11):
    """2F1 via Euler's integral, requires c > b > 0 and z < 1.

    Returns (value, converged, evaluations).
    """
    beta_minus = c - b - 1.0
    ln_norm = -special.betaln(b, c - b)
    evals = 0

    def log_kernel(t):
        # log of t^(b-1) (1-zt)^(-a) without the (1-t) factor
        return (b - 1.0) * np.log(t) - a * np.log1p(-z * t)

    if z >= -50.0:
        shift = 0.0 if z <= 0 else -a * math.log1p(-z)
        left, err_l, info_l = _quad_alg(
            lambda t: np.exp(-a * np.log1p(-z * t) + beta_minus * np.log1p(-t) - shift),
            0.0, 0.5, (b - 1.0, 0.0))
        right, err_r, info_r = _quad_alg(
            lambda t: np.exp(log_kernel(t) - shift), 0.5, 1.0, (0.0, beta_minus))
        evals = info_l + info_r
        total = left + right
        err = err_l + err_r
        ok = np.isfinite(total) and total > 0 and err <= max(rtol * total, 1e-300)
        return _scaled(ln_norm + shift, total), bool(ok), evals

    s = -z
    ln_s = math.log(s)
    # scale so the integrand peak is O(1); peak sits near t ~ 1/s
    shift = -b * ln_s if b < a else -a * ln_s

    def log_integrand_v(v):
        # t = exp(v) substitution on (0, 1/2]
        lt = v
        return (b * lt - a * np.logaddexp(0.0, ln_s + lt)
                + beta_minus * np.log1p(-np.exp(lt)) - shift)

    v_peak = min(-ln_s, -math.log(2.0))
    f_v = lambda v: math.exp(log_integrand_v(v))
    lower, err_a, info_a = integrate.quad(f_v, -np.inf, v_peak, epsabs=0.0, epsrel=rtol,
                                          limit=400, full_output=1)[:3]
    upper, err_b, info_b = integrate.quad(f_v, v_peak, -math.log(2.0), epsabs=0.0,
                                          epsrel=rtol, limit=400, full_output=1)[:3]
    tail, err_c, nev_c = _quad_alg(
        lambda t: np.exp((b - 1.0) * np.log(t) - a * np.log1p(s * t) - shift),
        0.5, 1.0, (0.0, beta_minus))
    evals = info_a["neval"] + info_b["neval"] + nev_c
    total = lower + upper + tail
    err = err_a + err_b + err_c
    ok = np.isfinite(total) and total > 0 and err <= max(rtol * total, 1e-300)
    return _scaled(ln_norm + shift, total), bool(ok), evals


def _scaled(log_scale: float, total: float) -> float:
    if not total > 0:
        return float("nan")
    with np.errstate(over="ignore", under="ignore"):
        return float(np.exp(log_scale + math.log(total)))


def _quad_alg(f, lo, hi, wvar):
    value, err, info = integrate.quad(f, lo, hi, weight="alg", wvar=wvar, epsabs=0.0,
                                      epsrel=1e-12, limit=400, full_output=1)[:3]
    return value, err, info["neval"]


def _euler_fallback(a, b, c, z) -> HypergeometricResult:
    for inner, outer in ((b, a), (a, b)):
        if c > inner > 0:
            value, ok, evals = _euler_integral(outer, inner, c, z)
            return HypergeometricResult(value, ok, 0, "euler_integral")
    return HypergeometricResult(float("nan"), False, 0, "euler_integral")


def hyp2f1(a: float, b: float, c: float, z: float, max_terms: int = MAX_TERMS
           ) -> HypergeometricResult:
    """Gauss hypergeometric function 2F1(a, b; c; z) for real z <= 1."""
    if _is_nonpositive_integer(c):
        raise ValueError("hyp2f1 requires c not a nonpositive integer")
    a, b = (a, b) if a <= b else (b, a)
    if z == 0.0 or a == 0.0:
        return HypergeometricResult(1.0, True, 1, "series")
    if _is_nonpositive_integer(a) or _is_nonpositive_integer(b):
        # terminating polynomial, valid for every z
        degree = int(-a if _is_nonpositive_integer(a) else -b)
        value, _, terms = _series((a, b), (c,), z, degree + 2)
        return HypergeometricResult(value, True, terms, "series")

    if 0.0 < z < 1.0:
        if not _series_hopeless(z, (a, b), max_terms):
            value, ok, terms = _series((a, b), (c,), z, max_terms)
            if ok:
                return HypergeometricResult(value, True, terms, "series")
        return _euler_fallback(a, b, c, z)

    if z < 0.0:
        w = z / (z - 1.0)
        # keep a terminating variant if one exists, else the faster-decaying tail
        if _is_nonpositive_integer(c - a) and not _is_nonpositive_integer(c - b):
            lead, second = b, c - a
        else:
            lead, second = a, c - b
        if not _series_hopeless(w, (lead, second), max_terms):
            value, ok, terms = _series((lead, second), (c,), w, max_terms)
            if ok:
                scale = math.exp(-lead * math.log1p(-z))
                return HypergeometricResult(scale * value, True, terms, "pfaff_transform")
        return _euler_fallback(a, b, c, z)

    if z == 1.0:
        if c - a - b > 0 and not _is_nonpositive_integer(c - a) and not _is_nonpositive_integer(c - b):
            value = float(special.gamma(c) * special.gamma(c - a - b)
                          / (special.gamma(c - a) * special.gamma(c - b)))
            return HypergeometricResult(value, bool(np.isfinite(value)), 0, "euler_integral")
        return HypergeometricResult(float("inf"), False, 0, "euler_integral")

    # beyond the branch point the real-valued function is not defined
    return HypergeometricResult(float("nan"), False, 0, "euler_integral")


def hyp3f2(a1: float, a2: float, a3: float, b1: float, b2: float, z: float,
           max_terms: int = MAX_TERMS) -> HypergeometricResult:
    """Generalized hypergeometric 3F2 by series; only |z| < 1 converges."""
    if _is_nonpositive_integer(b1) or _is_nonpositive_integer(b2):
        raise ValueError("hyp3f2 requires b1, b2 not nonpositive integers")
    numer = tuple(sorted((a1, a2, a3)))
    denom = tuple(sorted((b1, b2)))
    if z == 0.0 or 0.0 in numer:
        return HypergeometricResult(1.0, True, 1, "series")
    terminating = any(_is_nonpositive_integer(a) for a in numer)
    if abs(z) >= 1.0 and not terminating:
        return HypergeometricResult(float("nan"), False, 0, "series")
    value, ok, terms = _series(numer, denom, z, max_terms)
    return HypergeometricResult(value, ok, terms, "series")
