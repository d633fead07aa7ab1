import math

import mpmath as mp
import pytest
from hypothesis import given, strategies as st

from dsm_bnn.specfun import (HypergeometricResult, NonConvergenceError, hyp2f1, hyp3f2, ln_beta,
                             ln_gamma, ln_pochhammer, pochhammer)

mp.mp.dps = 40


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


class TestLnGamma:
    def test_values(self):
        assert ln_gamma(1.0) == 0.0
        assert ln_gamma(5.0) == pytest.approx(math.log(24.0), rel=1e-14)

    def test_half_against_gamma_integral(self):
        # integral of t^{-1/2} e^{-t} over (0, inf)
        oracle = mp.log(mp.quad(lambda t: t ** mp.mpf(-0.5) * mp.exp(-t), [0, 1, mp.inf]))
        assert rel(ln_gamma(0.5), float(oracle)) < 1e-12

    @given(st.floats(1e-3, 1e6))
    def test_range_accuracy(self, x):
        assert rel(ln_gamma(x), float(mp.loggamma(x))) < 1e-12 or abs(float(mp.loggamma(x))) < 1e-12

    @pytest.mark.parametrize("x", [0.0, -1.0, -0.5])
    def test_domain(self, x):
        with pytest.raises(ValueError):
            ln_gamma(x)

    def test_ln_beta(self):
        assert rel(ln_beta(0.3, 2.5), float(mp.log(mp.beta(0.3, 2.5)))) < 1e-13
        with pytest.raises(ValueError):
            ln_beta(0.0, 1.0)


class TestPochhammer:
    def test_trivial(self):
        assert pochhammer(7.3, 0) == 1.0
        assert pochhammer(-2.5, 0) == 1.0
        assert pochhammer(3, 2) == 12.0

    def test_half_order(self):
        expected = math.exp(ln_gamma(1.5) - ln_gamma(1.0))
        assert rel(pochhammer(1.0, 0.5), expected) < 1e-14
        assert rel(pochhammer(1.0, 0.5), math.sqrt(math.pi) / 2) < 1e-14

    def test_integer_rising_product_negative_x(self):
        assert pochhammer(-3.0, 2) == 6.0
        assert pochhammer(-2.0, 3) == 0.0

    def test_errors(self):
        with pytest.raises(ValueError):
            pochhammer(-0.5, 0.5)
        with pytest.raises(ValueError):
            pochhammer(1.0, 0.3)
        with pytest.raises(ValueError):
            ln_pochhammer(0.0, 1.0)

    @given(st.floats(0.01, 500.0), st.integers(0, 80).map(lambda k: k / 2))
    def test_against_mpmath(self, x, n):
        assert rel(pochhammer(x, n), float(mp.rf(x, n))) < 1e-12

    @given(st.floats(0.01, 50.0), st.integers(0, 40).map(lambda k: k / 2),
           st.integers(0, 40).map(lambda k: k / 2))
    def test_split_identity(self, x, m, n):
        lhs = ln_pochhammer(x, m + n)
        rhs = ln_pochhammer(x, m) + ln_pochhammer(x + m, n)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))

    def test_large_shape_log_space(self):
        assert rel(ln_pochhammer(1e5, 0.5), float(mp.log(mp.rf(1e5, 0.5)))) < 1e-12


class TestHyp2f1:
    def test_trivial(self):
        r = hyp2f1(0.3, 0.7, 1.9, 0.0)
        assert isinstance(r, HypergeometricResult) and r.value == 1.0 and r.converged

    def test_log_closed_form(self):
        assert rel(hyp2f1(1, 1, 2, 0.5).value, 2 * math.log(2)) < 1e-14

    @pytest.mark.parametrize("b", [0.3, 1.0, 4.5])
    def test_binomial(self, b):
        r = hyp2f1(2, b, b, -1.0)
        assert rel(r.value, 0.25) < 1e-13
        assert r.method == "pfaff_transform"

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.2, 5), st.floats(-10, 0.95))
    def test_symmetry(self, a, b, c, z):
        assert hyp2f1(a, b, c, z).value == hyp2f1(b, a, c, z).value

    @given(st.floats(0.05, 4.0), st.floats(0.05, 0.95), st.floats(-10, 0.95))
    def test_against_euler_quadrature(self, a, frac, z):
        b = 0.1 + 3.0 * frac
        c = b + 0.1 + 3 * frac
        oracle = (mp.gamma(c) / (mp.gamma(b) * mp.gamma(c - b))
                  * mp.quad(lambda t: t ** (b - 1) * (1 - t) ** (c - b - 1) * (1 - z * t) ** (-a), [0, 0.5, 1]))
        r = hyp2f1(a, b, c, z)
        assert r.converged and r.terms_used <= 10_000
        assert rel(r.value, float(oracle)) < 1e-8

    def test_near_one_uses_fallback(self):
        r = hyp2f1(0.5, 0.7, 3.0, 0.999999)
        assert r.converged
        assert rel(r.value, float(mp.hyp2f1(0.5, 0.7, 3.0, 0.999999))) < 1e-8

    def test_outside_domain_flagged(self):
        r = hyp2f1(0.5, 0.7, 1.3, 1.5)
        assert not r.converged
        with pytest.raises(NonConvergenceError):
            r.require()

    def test_pole(self):
        with pytest.raises(ValueError):
            hyp2f1(1, 1, -2, 0.5)


class TestHyp3f2:
    def test_trivial(self):
        assert hyp3f2(1, 2, 3, 4, 5, 0.0).value == 1.0

    def test_cancellation(self):
        lhs = hyp3f2(1, 1.5, 2, 1.5, 4, 0.3).value
        assert rel(lhs, hyp2f1(1, 2, 4, 0.3).value) < 1e-13

    def test_partial_sum_oracle(self):
        a, b, z = (mp.mpf(1), mp.mpf(1.5), mp.mpf("0.1")), (mp.mpf("0.5"), mp.mpf("1.1")), mp.mpf("0.25")
        total, term = mp.mpf(0), mp.mpf(1)
        for n in range(50):
            total += term
            term *= (a[0] + n) * (a[1] + n) * (a[2] + n) / ((b[0] + n) * (b[1] + n) * (n + 1)) * z
        r = hyp3f2(1, 1.5, 0.1, 0.5, 1.1, 0.25)
        assert rel(r.value, float(total)) < 1e-10

    def test_divergent_flagged(self):
        r = hyp3f2(0.5, 0.5, 1, 1.5, 2, 1.2)
        assert not r.converged

    @given(st.floats(0.1, 3), st.floats(0.1, 3), st.floats(0.1, 3), st.floats(0.2, 4), st.floats(0.2, 4),
           st.floats(-0.9, 0.9))
    def test_against_mpmath(self, a1, a2, a3, b1, b2, z):
        r = hyp3f2(a1, a2, a3, b1, b2, z)
        assert r.converged
        assert rel(r.value, float(mp.hyp3f2(a1, a2, a3, b1, b2, z))) < 1e-9
