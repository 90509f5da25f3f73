import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvtd import instances
from mvtd.errors import (
    ConstraintViolation,
    MissingProjectionRadius,
    NotPositive,
    SingularSystem,
    StepSizeTooLarge,
)
from mvtd.features import build_feature_set, identity_features, random_features
from mvtd.mdp import TransitionSampler, exact_square_value, exact_value, garnet_mdp, induced_chain, uniform_policy
from mvtd.system import (
    assemble_system,
    build_critic_system,
    c_check_constant,
    drift_bound,
    fixed_point,
    noise_constants,
    regularized_fixed_point,
    sample_matrices,
    sigma_check_sq,
    sigma_sq,
    spectral_constants,
    step_size_ceilings,
    tau,
    theorem_bound,
)

# hand-derived values for the 1-state instance (r = 1, gamma = 0.5, unit features)
ONE_M = np.array([[0.5, 0.0], [-1.0, 0.75]])
ONE_XI = np.array([1.0, 1.0])
ONE_MU = (1.25 - math.sqrt(1.0625)) / 2
BRACKET = 1.5**2 + 1.25**2 + 1.0  # (1+g)^2 + (1+g^2)^2 + 4 g^2


@pytest.fixture
def one_system(one_state):
    m, _, chain = one_state
    return build_critic_system(chain, identity_features(1), m.gamma, m.r_max)


def random_system(seed, q=3, n=6, zeta=None):
    rng = np.random.default_rng(seed)
    while True:
        m = garnet_mdp(n, 2, n, rng, gamma=float(rng.uniform(0.1, 0.9)))
        chain = induced_chain(m, uniform_policy(m))
        f = random_features(n, q, chain, rng)
        try:
            return m, chain, f, build_critic_system(chain, f, m.gamma, m.r_max, zeta=zeta)
        except NotPositive:
            continue


class TestAssembly:
    def test_one_state_blocks(self, one_state):
        m, _, chain = one_state
        M, xi = assemble_system(chain, identity_features(1), m.gamma)
        np.testing.assert_allclose(M, ONE_M, atol=1e-15)
        np.testing.assert_allclose(xi, ONE_XI, atol=1e-15)

    def test_zero_reward(self):
        m = instances.zero_reward()
        chain = induced_chain(m, uniform_policy(m))
        s = build_critic_system(chain, identity_features(3), m.gamma, m.r_max)
        assert np.all(s.xi == 0)
        assert np.all(s.w_bar == 0)
        assert s.sigma_sq == 0.0

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 100_000))
    def test_top_right_block_zero(self, seed):
        *_, s = random_system(seed)
        q = s.q
        assert np.all(s.m_mat[:q, q:] == 0.0)
        np.testing.assert_allclose(-s.m_mat @ s.w_bar + s.xi, 0, atol=1e-10)

    def test_expected_sample_matrix(self):
        m = instances.stochastic_pair()
        pol = uniform_policy(m)
        chain = induced_chain(m, pol)
        f = identity_features(2)
        M, xi = assemble_system(chain, f, m.gamma)
        sampler = TransitionSampler(m, pol, chain)
        rng = np.random.default_rng(5)
        n, batch = 10**6, 10**5
        s1 = np.zeros_like(M)
        s2 = np.zeros_like(M)
        r1 = np.zeros_like(xi)
        for _ in range(n // batch):
            s, _, r, sn = sampler.draw(rng, batch)
            Mt, rphi = sample_matrices(f, m.gamma, s, r, sn)
            s1 += Mt.sum(axis=0)
            s2 += (Mt**2).sum(axis=0)
            r1 += rphi.sum(axis=0)
        mean = s1 / n
        se = np.sqrt(np.maximum(s2 / n - mean**2, 0) / n)
        assert np.all(np.abs(mean - M) <= 3 * se + 1e-15)
        # the reward side is the same sampling scheme; a loose check suffices
        np.testing.assert_allclose(r1 / n, xi, atol=0.01)


class TestFixedPoints:
    def test_one_state(self, one_system):
        np.testing.assert_allclose(one_system.w_bar, [2.0, 4.0], atol=1e-14)

    @pytest.mark.parametrize("name", ["one_state", "two_cycle", "five_state_chain", "stochastic_pair"])
    def test_identity_features_recover_values(self, name):
        m, pol = instances.critic_instances()[name]
        chain = induced_chain(m, pol)
        s = build_critic_system(chain, identity_features(m.num_states), m.gamma, m.r_max)
        V = exact_value(chain, m.gamma)
        U = exact_square_value(chain, m.gamma, V)
        n = m.num_states
        assert np.max(np.abs(s.w_bar[:n] - V)) <= 1e-9
        assert np.max(np.abs(s.w_bar[n:] - U)) <= 1e-9

    def test_singular(self):
        with pytest.raises(SingularSystem):
            fixed_point(np.zeros((2, 2)), np.ones(2))

    def test_regularized_one_state(self):
        np.testing.assert_allclose(regularized_fixed_point(ONE_M, ONE_XI, 0.25), [4 / 3, 7 / 3], atol=1e-14)

    def test_regularized_continuity(self):
        w = regularized_fixed_point(ONE_M, ONE_XI, 1e-10)
        assert np.linalg.norm(w - fixed_point(ONE_M, ONE_XI)) <= 1e-8

    @pytest.mark.parametrize("zeta", [0.0, -0.1])
    def test_regularized_needs_positive_zeta(self, zeta):
        with pytest.raises(ConstraintViolation):
            regularized_fixed_point(ONE_M, ONE_XI, zeta)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 100_000), zeta=st.sampled_from([0.1, 0.01, 0.001, 1.0]))
    def test_drift_bound(self, seed, zeta):
        *_, s = random_system(seed)
        drift = np.linalg.norm(regularized_fixed_point(s.m_mat, s.xi, zeta) - s.w_bar)
        assert drift <= drift_bound(s.xi, s.iota, zeta) * (1 + 1e-12)


class TestSpectral:
    def test_one_state(self, one_system):
        assert one_system.mu == pytest.approx(ONE_MU, abs=1e-15)
        assert one_system.mu == pytest.approx(0.10961179679779243, abs=1e-15)
        assert one_system.iota > 0
        assert one_system.lam_max == pytest.approx((1.25 + math.sqrt(1.0625)) / 2, abs=1e-15)

    def test_identity_matrix(self):
        assert spectral_constants(np.eye(3)) == pytest.approx((1.0, 1.0, 1.0))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 100_000))
    def test_ordering(self, seed):
        *_, s = random_system(seed)
        assert 0 < s.mu <= s.lam_max

    def test_not_positive(self, one_state):
        _, _, chain = one_state
        # a negative discount turns the symmetric part indefinite
        with pytest.raises(NotPositive):
            build_critic_system(chain, identity_features(1), -3.0, 1.0)


class TestConstants:
    def test_c_and_beta_max(self, one_system):
        assert one_system.c_const == 7.0
        assert one_system.beta_max == pytest.approx(0.015658828113970347, rel=1e-14)

    def test_vanishing_discount(self):
        c, *_ = step_size_ceilings(0.1, 1.0, 1.0, 0.0, 1.0)
        assert c == 4.0

    def test_c_check_hand_value(self):
        cc = c_check_constant(1.0, 1.0, 0.5, 1.0, 0.1)
        assert cc == pytest.approx(0.01 + 0.2 * math.sqrt(BRACKET) + 7.0, rel=1e-15)

    def test_universal_step_ignores_mu(self):
        a = step_size_ceilings(0.1, 1.0, 1.0, 0.5, 1.0, zeta=0.1)
        b = step_size_ceilings(0.9, 1.0, 1.0, 0.5, 1.0, zeta=0.1)
        assert a[3] == b[3] == pytest.approx(0.1 / a[2])
        assert a[1] != b[1]

    def test_sigma_one_state(self, one_system):
        assert one_system.sigma_sq == pytest.approx(196.5, rel=1e-14)
        assert sigma_sq(1, 1, 0.5, 1, 20.0) == pytest.approx(4 + 2 * BRACKET * 20)

    def test_sigma_check_at_zero_zeta(self):
        reward = 4.0
        s = sigma_sq(1, 1, 0.5, 1, 20.0)
        sc = sigma_check_sq(1, 1, 0.5, 1, 0.0, 20.0)
        assert sc - reward == pytest.approx(2 * (s - reward))

    def test_tau_uses_radius(self):
        assert tau(1, 1, 0.5, 1, 3.0) == pytest.approx(math.sqrt(4 + 2 * BRACKET * 9))

    def test_noise_constants_need_radius(self, one_system):
        with pytest.raises(MissingProjectionRadius):
            noise_constants(one_system)
        h = 1.1 * np.linalg.norm(one_system.xi) / one_system.mu
        s = one_system.with_zeta(0.1).with_h_radius(h)
        sig, sigc, t, tc = noise_constants(s)
        assert sig == one_system.sigma_sq and t < tc

    def test_radius_must_exceed_floor(self, one_system):
        floor = np.linalg.norm(one_system.xi) / one_system.mu
        with pytest.raises(ConstraintViolation):
            one_system.with_h_radius(floor)


class TestBounds:
    def test_t2_hand_value(self, one_system):
        s = replace(one_system, mu=0.1, sigma_sq=1.0, beta_max=1.0)
        b = theorem_bound("T2_tail", s, t=2000, k=1000, beta=0.01, init_err=1.0)
        assert b == pytest.approx(10 * math.exp(-1) + 1.0, rel=1e-12)
        assert b == pytest.approx(4.6787944117, abs=1e-9)

    def test_t1_floor(self, one_system):
        beta = one_system.beta_max
        b = theorem_bound("T1_last", one_system, t=10**9, beta=beta, init_err=20.0)
        assert b == pytest.approx(2 * beta * one_system.sigma_sq / one_system.mu, rel=1e-12)

    def test_t4_delta_one(self, one_system):
        h = 1.1 * np.linalg.norm(one_system.xi) / one_system.mu
        s = one_system.with_h_radius(h)
        beta, k, t = s.beta_max, 100, 300
        b = theorem_bound("T4_highprob", s, t=t, k=k, beta=beta, delta=1.0, init_err=2.0)
        n = t - k
        expected = 4 * math.exp(-k * beta * s.mu) / (beta * s.mu * n) * 2.0 + 4 * s.tau / (s.mu * math.sqrt(n))
        assert b == pytest.approx(expected, rel=1e-12)

    def test_step_too_large(self, one_system):
        with pytest.raises(StepSizeTooLarge):
            theorem_bound("T1_last", one_system, t=10, beta=2 * one_system.beta_max)
        theorem_bound("T1_last", one_system, t=10, beta=2 * one_system.beta_max, check_step=False)

    def test_tail_needs_k(self, one_system):
        with pytest.raises(ConstraintViolation):
            theorem_bound("T2_tail", one_system, t=10, beta=0.001)
        with pytest.raises(ConstraintViolation):
            theorem_bound("T2_tail", one_system, t=10, k=10, beta=0.001)

    def test_regularized_bounds(self, one_system):
        s = one_system.with_zeta(0.1)
        beta = s.beta_check_max
        stated = theorem_bound("T3_reg", s, t=4000, k=2000, beta=beta, init_err=1.0)
        expanded = theorem_bound("T3_reg", s, t=4000, k=2000, beta=beta, init_err=1.0, form="expanded")
        to_reg = theorem_bound("T3_reg_to_wreg", s, t=4000, k=2000, beta=beta, init_err=1.0)
        assert stated > 0 and expanded > 0 and to_reg > 0
        with pytest.raises(StepSizeTooLarge):
            theorem_bound("T3_reg", s, t=4000, k=2000, beta=1.01 * beta)
        with pytest.raises(MissingProjectionRadius):
            theorem_bound("T5_reg_highprob", s, t=4000, k=2000, beta=beta, delta=0.1)

    def test_unknown(self, one_system):
        with pytest.raises(ConstraintViolation):
            theorem_bound("T9", one_system.with_zeta(0.1), t=10, k=5, beta=1e-4)


class TestSampleMatrices:
    def test_matches_td_errors(self, rng):
        m, chain, f, s = random_system(3)
        w = rng.normal(size=2 * f.q)
        st_, _, r, sn = TransitionSampler(m, uniform_policy(m), chain).draw(rng, 50)
        M, rphi = sample_matrices(f, m.gamma, st_, r, sn)
        q = f.q
        v, u = w[:q], w[q:]
        for i in range(50):
            pv, pvn, pu, pun = f.phi_v[st_[i]], f.phi_v[sn[i]], f.phi_u[st_[i]], f.phi_u[sn[i]]
            delta = r[i] + m.gamma * v @ pvn - v @ pv
            eps = r[i] ** 2 + 2 * m.gamma * r[i] * v @ pvn + m.gamma**2 * u @ pun - u @ pu
            np.testing.assert_allclose(rphi[i] - M[i] @ w, np.concatenate([delta * pv, eps * pu]), atol=1e-12)

    def test_explicit_features(self, chain5):
        m, _, chain = chain5
        f = build_feature_set(np.eye(5)[:, :3] + 0.1, np.eye(5)[:, 1:4], chain)
        M, _ = sample_matrices(f, m.gamma, [0, 1], [0.0, 1.0], [1, 2])
        assert M.shape == (2, 6, 6)
