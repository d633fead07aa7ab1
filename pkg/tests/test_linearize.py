import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsm_bnn.bnn import Model, NetworkWeights, forward_weights, unpack_weights
from dsm_bnn.layout import LinearShape, NetworkShape
from dsm_bnn.linearize import (Linearization, MeffSeries, build_linearization, generalized_modes, m_eff_trace,
                               mode_shrinkage, posterior_m_eff_trace, shrinkage_bounds, shrinkage_matrix,
                               whitened_spectrum)
from dsm_bnn.priors import PriorSpec


def random_pair(rng, dim):
    A = rng.normal(size=(dim + 5, dim))
    S = A.T @ A * rng.uniform(0.1, 3.0)
    P = np.exp(rng.normal(size=dim))
    return P, S


def toy(family="DHS", p=3, H=4, n=25, seed=0):
    rng = np.random.default_rng(seed)
    spec = PriorSpec(family) if family == "Gaussian" else PriorSpec(family, tau0=0.1)
    model = Model(NetworkShape(p, H), spec)
    return model, rng.normal(size=(n, p)), rng


def set_block(model, theta, name, value):
    b = model.layout.split(theta.copy())
    b[name] = np.broadcast_to(value, np.shape(b[name])).copy()
    return model.layout.join(b)


class TestBuild:
    def test_zero_output_weights(self):
        model, X, rng = toy()
        theta = set_block(model, rng.normal(size=model.layout.dim), "W_L", 0.0)
        linz = build_linearization(theta, X, model)
        assert np.all(linz.J_w == 0)
        assert np.all(linz.S == 0)

    @pytest.mark.parametrize("family", ["DHS", "RHS", "BST"])
    def test_jacobian_finite_differences(self, family):
        model, X, rng = toy(family)
        theta = rng.normal(size=model.layout.dim)
        w = unpack_weights(theta, model)
        linz = build_linearization(theta, X, model)
        H, p = w.W1.shape
        h = 1e-6
        for hu in range(H):
            for j in range(p):
                Wp, Wm = w.W1.copy(), w.W1.copy()
                Wp[hu, j] += h
                Wm[hu, j] -= h
                fp = forward_weights(X, NetworkWeights(Wp, w.b1, w.W_L, w.b_L))[:, 0]
                fm = forward_weights(X, NetworkWeights(Wm, w.b1, w.W_L, w.b_L))[:, 0]
                fd = (fp - fm) / (2 * h)
                col = linz.J_w[:, hu * p + j]
                assert np.max(np.abs(col - fd) / np.maximum(np.abs(fd), 1e-3)) < 1e-6

    def test_small_argument_linear_regime(self):
        model, X, rng = toy()
        theta = set_block(model, rng.normal(size=model.layout.dim), "b1", 0.0)
        Xs = 1e-4 * X
        linz = build_linearization(theta, Xs, model)
        wl = unpack_weights(theta, model).W_L[:, 0]
        expected = np.hstack([wl[h] * Xs for h in range(wl.size)])
        np.testing.assert_allclose(linz.J_w, expected, rtol=1e-3)

    def test_marginal_covariance_and_precisions(self):
        model, X, rng = toy()
        theta = rng.normal(size=model.layout.dim)
        linz = build_linearization(theta, X, model, woodbury=False)
        Q = linz.Q
        np.testing.assert_allclose(linz.Sigma_y, Q @ Q.T + linz.sigma ** 2 * np.eye(X.shape[0]), rtol=1e-13)
        assert np.allclose(linz.Sigma_y, linz.Sigma_y.T)
        np.testing.assert_allclose(linz.S, linz.J_w.T @ np.linalg.solve(linz.Sigma_y, linz.J_w), rtol=1e-8, atol=1e-12)
        assert np.all(linz.P > 0)
        np.testing.assert_allclose(linz.P, 1 / (linz.tau ** 2 * linz.Psi), rtol=1e-12)
        assert np.min(np.linalg.eigvalsh(linz.S)) > -1e-10 * np.max(np.abs(linz.S))

    def test_woodbury_matches_cholesky(self):
        model, X, rng = toy(n=60)
        theta = rng.normal(size=model.layout.dim)
        a = build_linearization(theta, X, model, woodbury=False)
        b = build_linearization(theta, X, model, woodbury=True)
        np.testing.assert_allclose(b.S, a.S, rtol=1e-8, atol=1e-10 * np.max(np.abs(a.S)))

    def test_gaussian_prior_precision(self):
        model, X, rng = toy("Gaussian", p=5)
        linz = build_linearization(rng.normal(size=model.layout.dim), X, model)
        assert linz.tau == 1.0
        np.testing.assert_allclose(linz.Psi, 1 / 5)
        np.testing.assert_allclose(linz.P, 5.0)

    def test_linear_model(self):
        rng = np.random.default_rng(3)
        model = Model(LinearShape(4), PriorSpec("DHS", tau0=0.1))
        X = rng.normal(size=(30, 4))
        linz = build_linearization(rng.normal(size=model.layout.dim), X, model)
        np.testing.assert_array_equal(linz.J_w, X)
        assert linz.Q.shape == (30, 1)

    def test_hidden_unit_permutation(self):
        model, X, rng = toy(H=5)
        theta = rng.normal(size=model.layout.dim)
        b = model.layout.split(theta.copy())
        perm = [3, 0, 4, 1, 2]
        per_unit = ("z_W1", "b1", "W_L", "log_lambda", "xi", "log_c_sq")
        theta2 = model.layout.join({k: (np.asarray(v)[perm] if k in per_unit else v) for k, v in b.items()})
        a, c = build_linearization(theta, X, model), build_linearization(theta2, X, model)
        p = X.shape[1]
        cols = np.concatenate([np.arange(h * p, (h + 1) * p) for h in perm])
        np.testing.assert_allclose(c.J_w, a.J_w[:, cols], rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(whitened_spectrum(c.P, c.S), whitened_spectrum(a.P, a.S), rtol=1e-10, atol=1e-10)
        assert m_eff_trace(c.P, c.S) == pytest.approx(m_eff_trace(a.P, a.S), abs=1e-10)


class TestShrinkageMatrix:
    def test_zero_data(self):
        P = np.array([1.0, 2.0, 3.0])
        assert np.all(shrinkage_matrix(P, np.zeros((3, 3))) == 0)

    def test_diagonal_reduction(self):
        s, p = np.array([0.5, 2.0, 9.0]), np.array([1.0, 2.0, 1.0])
        K = shrinkage_matrix(p, np.diag(s))
        np.testing.assert_allclose(K, np.diag(s / (p + s)), atol=1e-15)

    def test_two_forms_agree(self, rng):
        P, S = random_pair(rng, 20)
        np.testing.assert_allclose(shrinkage_matrix(P, S, "data"), shrinkage_matrix(P, S, "prior"), atol=1e-10)

    def test_accepts_full_diagonal_matrix(self, rng):
        P, S = random_pair(rng, 6)
        np.testing.assert_array_equal(shrinkage_matrix(np.diag(P), S), shrinkage_matrix(P, S))

    def test_dimension_check(self):
        with pytest.raises(ValueError):
            shrinkage_matrix(np.ones(3), np.eye(4))
        with pytest.raises(ValueError):
            shrinkage_matrix(np.ones(2), np.eye(2), form="other")


class TestSpectrum:
    def test_identity_prior(self, rng):
        _, S = random_pair(rng, 8)
        np.testing.assert_allclose(whitened_spectrum(np.ones(8), S), np.sort(np.linalg.eigvalsh(S))[::-1],
                                   rtol=1e-12)

    def test_proportional(self, rng):
        P = np.exp(rng.normal(size=7))
        np.testing.assert_allclose(whitened_spectrum(P, 2.5 * np.diag(P)), 2.5, rtol=1e-13)

    def test_generalized_eigen_oracle(self, rng):
        P, S = random_pair(rng, 10)
        ref = np.sort(np.linalg.eigvals(S / P[:, None]).real)[::-1]
        omega = whitened_spectrum(P, S)
        np.testing.assert_allclose(omega, ref, atol=1e-9 * ref[0])
        np.testing.assert_allclose(generalized_modes(P, S)[0], omega, atol=1e-9 * ref[0])

    def test_m_eff_examples(self, rng):
        P = np.exp(rng.normal(size=6))
        assert m_eff_trace(P, np.zeros((6, 6))) == 0
        assert m_eff_trace(P, np.diag(P)) == pytest.approx(3.0, rel=1e-14)
        P, S = random_pair(rng, 30)
        assert m_eff_trace(P, S, "spectrum") == pytest.approx(m_eff_trace(P, S, "trace"), abs=1e-8)

    @settings(max_examples=40)
    @given(st.integers(1, 40), st.integers(0, 2**31 - 1))
    def test_m_eff_range(self, dim, seed):
        P, S = random_pair(np.random.default_rng(seed), dim)
        m = m_eff_trace(P, S)
        omega = whitened_spectrum(P, S)
        k_eig = omega / (1 + omega)
        assert 0 <= m < dim
        assert np.all((k_eig >= 0) & (k_eig < 1))


class TestModes:
    def test_basis_vector_scalar_case(self):
        s = np.array([0.5, 4.0, 1.0])
        Psi, tau = np.array([2.0, 0.5, 1.0]), 0.7
        P = 1 / (tau ** 2 * Psi)
        for j in range(3):
            u = np.eye(3)[j]
            k, psi2 = mode_shrinkage(u, P, np.diag(s), tau, Psi)
            assert psi2 == pytest.approx(Psi[j])
            assert k == pytest.approx(1 / (1 + tau ** 2 * Psi[j] * s[j]), rel=1e-14)

    def test_null_direction(self):
        k, _ = mode_shrinkage(np.array([0.0, 1.0]), np.ones(2), np.diag([3.0, 0.0]), 1.0, np.ones(2))
        assert k == 1.0

    def test_eigenvector_matches_spectrum(self, rng):
        tau = 0.3
        P, S = random_pair(rng, 12)
        Psi = 1 / (tau ** 2 * P)
        omega, U = generalized_modes(P, S)
        for j in range(12):
            k, _ = mode_shrinkage(U[:, j], P, S, tau, Psi)
            assert 1 - k == pytest.approx(omega[j] / (1 + omega[j]), abs=1e-9)

    def test_unit_norm_required(self):
        with pytest.raises(ValueError):
            mode_shrinkage(np.array([1.0, 1.0]), np.ones(2), np.eye(2), 1.0, np.ones(2))


class TestBounds:
    def test_sandwich_on_random_modes(self):
        model, X, rng = toy(n=30)
        for _ in range(100):
            linz = build_linearization(rng.normal(size=model.layout.dim), X, model)
            u = rng.normal(size=linz.dim)
            u /= np.linalg.norm(u)
            k, _ = mode_shrinkage(u, linz.P, linz.S, linz.tau, linz.Psi)
            lo, hi = shrinkage_bounds(linz, u)
            assert lo <= (1 - k) * (1 + 1e-12) + 1e-15
            assert (1 - k) <= hi * (1 + 1e-12) + 1e-15

    def test_collapse_without_nuisance_columns(self, rng):
        n, d, sigma, tau = 20, 4, 0.8, 0.5
        J = rng.normal(size=(n, d))
        Psi = np.exp(rng.normal(size=d))
        linz = Linearization(J_w=J, J_b=np.zeros((n, 0)), Phi0=np.zeros((n, 0)), sigma=sigma, tau=tau, Psi=Psi,
                             P=1 / (tau ** 2 * Psi), S=J.T @ J / sigma ** 2, intercept=False)
        u = rng.normal(size=d)
        u /= np.linalg.norm(u)
        k, _ = mode_shrinkage(u, linz.P, linz.S, tau, Psi)
        lo, hi = shrinkage_bounds(linz, u)
        assert lo == pytest.approx(1 - k, rel=1e-12)
        assert hi == pytest.approx(1 - k, rel=1e-12)

    def test_infinite_noise_limit(self):
        model, X, rng = toy()
        linz = build_linearization(rng.normal(size=model.layout.dim), X, model, sigma=1e12)
        u = np.eye(linz.dim)[0]
        lo, hi = shrinkage_bounds(linz, u)
        assert 0 <= lo <= hi < 1e-12


class TestPosteriorSeries:
    def test_zero_network_draws(self):
        model, X, rng = toy()
        draws = np.array([set_block(model, rng.normal(size=model.layout.dim), "W_L", 0.0) for _ in range(4)])
        out = posterior_m_eff_trace(draws, X, model)
        assert isinstance(out, MeffSeries)
        np.testing.assert_array_equal(out.values, 0.0)

    def test_bounded_and_thinned(self):
        model, X, rng = toy()
        draws = rng.normal(size=(10, model.layout.dim))
        out = posterior_m_eff_trace(draws, X, model, thin=3, keep_spectra=True)
        np.testing.assert_array_equal(out.draw_index, [0, 3, 6, 9])
        H, p = 4, 3
        assert np.all((out.values >= 0) & (out.values < H * p))
        assert len(out.spectra) == 4

    def test_skips_non_finite(self):
        model, X, rng = toy()
        draws = rng.normal(size=(3, model.layout.dim))
        draws[1, :] = np.inf
        out = posterior_m_eff_trace(draws, X, model)
        assert out.skipped == 1
        np.testing.assert_array_equal(out.draw_index, [0, 2])
