import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate, stats

from dsm_bnn.bnn import Model, assemble_first_layer
from dsm_bnn.layout import Layout, LinearShape, NetworkShape
from dsm_bnn.priors import (FAMILIES, PriorSpec, log_prior, regularized_scale, sample_prior,
                            scale_state, simplex_to_unconstrained, stick_breaking, tau0)
from dsm_bnn.shrinkage import cv_squared_mc, half_t_sampler

from oracles import first_layer_oracle, log_prior_oracle, stick_log_jacobian_mp, stick_map_mp


def spec_for(family, **kw):
    return PriorSpec(family=family, **kw).with_tau0(10, 100) if family != "Gaussian" else PriorSpec(family=family, **kw)


class TestTau0:
    def test_examples(self):
        assert tau0(4, 10, 1.0, 100) == pytest.approx(4 / 6 / 10, rel=1e-14)
        assert tau0(4, 10, 1.0, 200) == pytest.approx(0.047140452, rel=1e-8)

    @given(st.integers(1, 50), st.floats(0.1, 10), st.integers(1, 10_000))
    def test_ratio_collapses(self, p0, sigma, N):
        assert tau0(p0, 2 * p0, sigma, N) == pytest.approx(sigma / math.sqrt(N), rel=1e-14)

    @pytest.mark.parametrize("p0,p", [(4, 4), (5, 4), (0, 3)])
    def test_domain(self, p0, p):
        with pytest.raises(ValueError):
            tau0(p0, p, 1.0, 10)

    def test_spec_with_tau0(self):
        assert PriorSpec("DHS").with_tau0(10, 100).tau0 == pytest.approx(1 / 15)


class TestPriorSpec:
    def test_defaults(self):
        s = PriorSpec()
        assert (s.alpha, s.slab_df, s.slab_scale_sq, s.sigma_a, s.sigma_b, s.p0) == (0.1, 4, 2, 3, 2, 4)
        assert PriorSpec("DST").lambda_df == 3.0
        assert PriorSpec("DHS").lambda_df == 1.0

    def test_round_trip(self):
        s = PriorSpec("BST", nu=5.0, alpha=0.3, tau0=0.2)
        assert PriorSpec.from_dict(s.to_dict()) == s

    @pytest.mark.parametrize("kw", [{"family": "Laplace"}, {"family": "DHS", "nu": 3}, {"alpha": 0.0},
                                    {"p0": 0}, {"slab_df": -1}, {"tau0": -1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            PriorSpec(**kw)

    def test_unknown_field(self):
        with pytest.raises(ValueError):
            PriorSpec.from_dict({"family": "DHS", "bogus": 1})


class TestRegularizedScale:
    def test_examples(self):
        assert regularized_scale(1.0, 1.0, 1.0) == 0.5
        assert regularized_scale(2.0, 1.0, 1e15) == pytest.approx(4.0, rel=1e-12)
        assert regularized_scale(1e9, 0.5, 1.0) == pytest.approx(4.0, rel=1e-12)

    @given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
    def test_bound(self, lam, tau, c_sq):
        assert regularized_scale(lam, tau, c_sq) < c_sq / tau**2 * (1 + 1e-12)


class TestSimplex:
    @given(arrays(float, st.integers(1, 8), elements=st.floats(-8, 8)))
    def test_round_trip(self, y):
        log_xi = stick_breaking(y)[0]
        assert abs(np.exp(log_xi).sum() - 1) < 1e-12
        np.testing.assert_allclose(simplex_to_unconstrained(log_xi=log_xi), y, atol=1e-12, rtol=0)

    def test_zero_is_uniform(self):
        np.testing.assert_allclose(np.exp(stick_breaking(np.zeros(4))[0]), 0.2, rtol=1e-14)

    @pytest.mark.parametrize("y", [[0.3], [1.2, -0.4], [-2.0, 0.5, 3.1]])
    def test_log_jacobian(self, y):
        assert stick_breaking(np.array(y))[1] == pytest.approx(stick_log_jacobian_mp(y), rel=1e-11)


SHAPES = [NetworkShape(3, 2), LinearShape(4)]


class TestLogPrior:
    def test_gaussian_zero_state(self):
        layout = Layout(NetworkShape(3, 2), "Gaussian", "binary_classification")
        assert log_prior(np.zeros(layout.dim), PriorSpec("Gaussian"), layout) == pytest.approx(
            -0.5 * layout.dim * math.log(2 * math.pi), rel=1e-14)

    @pytest.mark.parametrize("family", FAMILIES)
    @pytest.mark.parametrize("shape", SHAPES, ids=["net", "linear"])
    def test_component_oracle(self, family, shape, rng):
        spec = spec_for(family)
        layout = Layout(shape, family, "regression")
        for _ in range(4):
            theta = rng.normal(scale=0.8, size=layout.dim)
            assert log_prior(theta, spec, layout) == pytest.approx(log_prior_oracle(theta, spec, layout),
                                                                 abs=1e-10, rel=1e-12)

    def test_dirichlet_symmetry(self, rng):
        spec = spec_for("DHS")
        layout = Layout(NetworkShape(4, 2), "DHS")
        theta = rng.normal(size=layout.dim)
        blocks = layout.split(theta.copy())
        log_xi, log_jac, _ = stick_breaking(blocks["xi"])
        permuted = dict(blocks)
        permuted["xi"] = simplex_to_unconstrained(log_xi=log_xi[:, [2, 0, 3, 1]])
        theta_p = layout.join(permuted)
        # the density of xi on the simplex is symmetric; the unconstrained Jacobian is not
        lp = log_prior(theta, spec, layout) - log_jac.sum()
        lp_p = log_prior(theta_p, spec, layout) - stick_breaking(permuted["xi"])[1].sum()
        assert lp == pytest.approx(lp_p, abs=1e-11)

    def test_dst_nu1_equals_dhs(self, rng):
        for shape in SHAPES:
            dhs = Layout(shape, "DHS")
            dst = Layout(shape, "DST")
            theta = rng.normal(size=dhs.dim)
            a = log_prior(theta, spec_for("DHS"), dhs)
            b = log_prior(theta, spec_for("DST", nu=1.0), dst)
            assert a == b

    @pytest.mark.parametrize("coords", ["xi", "scales"])
    def test_slice_normalization(self, coords, rng):
        spec = spec_for("DHS", alpha=1.0)
        layout = Layout(NetworkShape(3, 2), "DHS", "binary_classification")
        theta0 = rng.normal(scale=0.5, size=layout.dim)
        if coords == "xi":
            idx = np.arange(layout.dim)[layout.slices["xi"][0]][:2]
            box = (-25, 25)
        else:
            idx = [layout.slices["log_tau"][0].start, layout.slices["log_lambda"][0].start]
            box = (-40, 25)
        # prior blocks are independent: integrating exp(lp - lp(theta0)) over the slice
        # gives 1 / p_slice(theta0), with p_slice from the component oracle
        full_ref = log_prior(theta0, spec, layout)

        def f(a, b):
            th = theta0.copy()
            th[idx[0]], th[idx[1]] = a, b
            return math.exp(log_prior(th, spec, layout) - full_ref)

        mass, _ = integrate.dblquad(f, *box, *box, epsabs=1e-10, epsrel=1e-8)
        lp_slice = self._slice_density(theta0, idx, spec, layout)
        assert mass * math.exp(lp_slice) == pytest.approx(1.0, abs=1e-3)

    @staticmethod
    def _slice_density(theta, idx, spec, layout):
        # log density of the two sliced coordinates alone, from the component oracle
        b = layout.split(theta)
        if "xi" in layout.coordinate_names[idx[0]]:
            y = list(b["xi"][0])
            xi = np.array([float(v) for v in stick_map_mp(y)])
            return stats.dirichlet(np.full(layout.width, spec.alpha)).logpdf(xi) + stick_log_jacobian_mp(y)
        tau = math.exp(float(b["log_tau"]))
        lam = math.exp(float(b["log_lambda"][0]))
        return (stats.halfcauchy(scale=spec.tau0).logpdf(tau) + math.log(tau)
                + math.log(2) + stats.t(spec.lambda_df).logpdf(lam) + math.log(lam))


class TestSamplePrior:
    def test_dirichlet_mean(self):
        spec = spec_for("DHS", alpha=1.0)
        layout = Layout(LinearShape(3), "DHS")
        draws = sample_prior(spec, layout, seed=1, size=100_000)
        xi = np.exp(stick_breaking(layout.split(draws)["xi"][:, 0, :])[0])
        se = xi.std(axis=0) / math.sqrt(len(xi))
        assert np.all(np.abs(xi.mean(axis=0) - 1 / 3) < 3 * se)

    def test_regularized_bound_every_draw(self):
        spec = spec_for("RHS")
        layout = Layout(NetworkShape(3, 4), "RHS")
        for theta in sample_prior(spec, layout, seed=2, size=2000):
            st_ = scale_state(theta, spec, layout)
            assert np.all(st_.lambda_tilde_sq <= st_.c_sq / st_.tau**2 * (1 + 1e-12))

    def test_deterministic(self):
        spec = spec_for("DST")
        layout = Layout(NetworkShape(3, 2), "DST")
        np.testing.assert_array_equal(sample_prior(spec, layout, seed=7, size=5),
                                      sample_prior(spec, layout, seed=7, size=5))

    def test_cv_squared_large_c(self):
        # lambda draws from the sampler's prior against an independent half-Cauchy MC
        spec = spec_for("RHS")
        layout = Layout(LinearShape(10), "RHS")
        draws = sample_prior(spec, layout, seed=3, size=20_000)
        lam = np.exp(layout.split(draws)["log_lambda"]).ravel()
        c_sq, tau = 100.0, 1.0
        lt = regularized_scale(lam, tau, c_sq)
        cv2 = lt.var() / lt.mean() ** 2
        ref = cv_squared_mc(half_t_sampler(1.0), c_sq, tau, 1_000_000, seed=11)
        assert cv2 == pytest.approx(ref.estimate, rel=0.05)


class TestFirstLayer:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_oracle(self, family, rng):
        for shape in SHAPES:
            model = Model(shape, spec_for(family))
            theta = rng.normal(size=model.layout.dim)
            np.testing.assert_allclose(assemble_first_layer(theta, model),
                                       first_layer_oracle(theta, model.spec, model.layout), rtol=1e-12)

    def test_zero_z(self, rng):
        model = Model(NetworkShape(3, 2), spec_for("DHS"))
        theta = rng.normal(size=model.layout.dim)
        theta[model.layout.slices["z_W1"][0]] = 0
        assert np.all(assemble_first_layer(theta, model) == 0)

    def test_uniform_allocation_stddev(self):
        p = 5
        model = Model(NetworkShape(p, 1), PriorSpec("DHS", tau0=1.0, slab_scale_sq=1e300))
        b = model.layout.split(np.zeros(model.layout.dim))
        b["z_W1"] = np.ones((1, p))
        b["log_tau"], b["log_lambda"] = 0.0, np.zeros(1)
        b["log_c_sq"] = np.full(1, 650.0)
        W = assemble_first_layer(model.layout.join(b), model)
        # tau = lambda_tilde = 1, xi = 1/p, sqrt(p) factor: entries 1/p
        np.testing.assert_allclose(W, 1 / p, rtol=1e-12)

    def test_joint_row_permutation(self, rng):
        model = Model(NetworkShape(4, 1), spec_for("DHS"))
        layout = model.layout
        b = layout.split(rng.normal(size=layout.dim))
        perm = [3, 1, 0, 2]
        log_xi = stick_breaking(b["xi"])[0]
        b2 = dict(b)
        b2["z_W1"] = b["z_W1"][:, perm]
        b2["xi"] = simplex_to_unconstrained(log_xi=log_xi[:, perm])
        W = assemble_first_layer(layout.join(b), model)
        W2 = assemble_first_layer(layout.join(b2), model)
        np.testing.assert_allclose(W2, W[:, perm], rtol=1e-12)
