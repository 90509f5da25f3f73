import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvtd.errors import DimensionMismatch, RankDeficient
from mvtd.features import build_feature_set, identity_features, projection_matrix, random_features, weighted_norm
from mvtd.mdp import garnet_mdp, induced_chain, uniform_policy, validate_mdp


def uniform_chain(n=5):
    m = validate_mdp(np.full((n, 1, n), 1.0 / n), np.zeros((n, 1)), 0.5, r_max=0.0)
    return induced_chain(m, uniform_policy(m))


def garnet_chain(seed, n=6):
    rng = np.random.default_rng(seed)
    m = garnet_mdp(n, 2, n, rng)  # full branching keeps the chain irreducible
    return induced_chain(m, uniform_policy(m))


class TestIdentity:
    @pytest.mark.parametrize("n", [1, 5])
    def test_projection_is_identity(self, n):
        f = identity_features(n)
        assert f.q == n
        np.testing.assert_array_equal(f.pi_v, np.eye(n))
        np.testing.assert_array_equal(f.pi_u, np.eye(n))
        assert f.phi_v_max == f.phi_u_max == 1.0

    def test_projection_with_chain_is_identity(self, chain5):
        _, _, chain = chain5
        f = build_feature_set(np.eye(5), np.eye(5), chain)
        np.testing.assert_allclose(f.pi_v, np.eye(5), atol=1e-12)

    def test_scaled(self):
        f = identity_features(3, scale=2.0)
        assert f.phi_v_max == 2.0
        np.testing.assert_array_equal(f.phi_u, 2.0 * np.eye(3))

    def test_zero_states(self):
        with pytest.raises(DimensionMismatch):
            identity_features(0)


class TestValidation:
    def test_duplicated_column(self):
        phi = np.array([[1.0, 1.0], [2.0, 2.0], [0.5, 0.5]])
        with pytest.raises(RankDeficient):
            build_feature_set(phi, phi, uniform_chain(3))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            build_feature_set(np.eye(3), np.eye(3)[:, :2], uniform_chain(3))

    def test_rows_disagree_with_chain(self):
        with pytest.raises(DimensionMismatch):
            build_feature_set(np.eye(4), np.eye(4), uniform_chain(3))

    def test_bounds_are_row_norm_maxima(self, rng):
        phi_v = rng.normal(size=(5, 2))
        phi_u = rng.normal(size=(5, 2))
        f = build_feature_set(phi_v, phi_u, uniform_chain(5))
        assert f.phi_v_max == pytest.approx(np.linalg.norm(phi_v, axis=1).max(), rel=1e-15)
        assert f.phi_u_max == pytest.approx(np.linalg.norm(phi_u, axis=1).max(), rel=1e-15)
        assert np.all(np.linalg.norm(f.phi_v, axis=1) <= f.phi_v_max)

    def test_frozen_arrays(self):
        f = identity_features(2)
        with pytest.raises(ValueError):
            f.phi_v[0, 0] = 3.0


class TestProjection:
    def test_matches_normal_equations_oracle(self, rng):
        chain = uniform_chain(5)
        phi = rng.normal(size=(5, 2))
        f = build_feature_set(phi, phi.copy(), chain)
        # oracle: weighted least squares via sqrt(D)
        sq = np.sqrt(chain.chi)[:, None]
        for i in range(5):
            y = np.eye(5)[i]
            x, *_ = np.linalg.lstsq(sq * phi, sq[:, 0] * y, rcond=None)
            np.testing.assert_allclose(f.pi_v @ y, phi @ x, atol=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), q=st.integers(1, 4))
    def test_idempotent(self, seed, q):
        chain = garnet_chain(seed)
        f = random_features(6, q, chain, np.random.default_rng(seed))
        np.testing.assert_allclose(f.pi_v @ f.pi_v, f.pi_v, atol=1e-10)
        np.testing.assert_allclose(f.pi_u @ f.pi_u, f.pi_u, atol=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_non_expansive_in_weighted_norm(self, seed):
        chain = garnet_chain(seed)
        rng = np.random.default_rng(seed + 1)
        f = random_features(6, 3, chain, rng)
        for _ in range(10):
            y = rng.normal(size=6) * 10.0 ** rng.uniform(-3, 3)
            assert weighted_norm(f.pi_v @ y, chain.chi) <= weighted_norm(y, chain.chi) * (1 + 1e-12)

    def test_minimizes_weighted_residual(self, rng):
        chain = garnet_chain(3)
        phi = rng.normal(size=(6, 2))
        pi = projection_matrix(phi, chain.chi)
        y = rng.normal(size=6)
        x_star, *_ = np.linalg.lstsq(phi, pi @ y, rcond=None)

        def loss(x):
            r = y - phi @ x
            return float(r @ (chain.chi * r))

        best = loss(x_star)
        grid = np.linspace(-1, 1, 41)
        for dx in grid:
            for dy in grid:
                assert loss(x_star + np.array([dx, dy])) >= best - 1e-12

    def test_random_features_orthonormal_columns(self, rng):
        chain = garnet_chain(1)
        f = random_features(6, 3, chain, rng, scale=2.0)
        np.testing.assert_allclose(f.phi_v.T @ f.phi_v, 4.0 * np.eye(3), atol=1e-12)

    def test_random_features_q_out_of_range(self, rng):
        with pytest.raises(DimensionMismatch):
            random_features(6, 7, garnet_chain(1), rng)
