import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvtd import instances
from mvtd.errors import DimensionMismatch, InvalidMixingConstants
from mvtd.gradients import (
    SoftmaxPolicy,
    c_nu_constant,
    doeblin_mixing,
    exact_grad_j,
    exact_grad_u,
    exact_j,
    exact_u,
    finite_difference,
    grad_lagrangian,
    gradient_bundle,
    instance_constants,
    lagrangian,
    lipschitz_constants,
    log_prob,
    score,
    score_table,
    softmax_constants,
    tabular_action_features,
    value_functions,
)
from mvtd.mdp import garnet_mdp, validate_mdp


def random_instance(seed, states=3, actions=2):
    rng = np.random.default_rng(seed)
    m = garnet_mdp(states, actions, states, rng)
    x = rng.normal(size=(states, actions, 2))
    theta = rng.uniform(-1, 1, size=2)
    return m, SoftmaxPolicy(theta, x)


def monte_carlo_returns(mdp, probs, s0, episodes, horizon, rng):
    s = np.full(episodes, s0)
    g = np.zeros(episodes)
    disc = 1.0
    cum_p = np.cumsum(probs, axis=1)
    cum_t = np.cumsum(mdp.transitions, axis=2)
    for _ in range(horizon):
        a = (rng.random(episodes)[:, None] > cum_p[s]).sum(axis=1)
        g += disc * mdp.rewards[s, a]
        s = (rng.random(episodes)[:, None] > cum_t[s, a]).sum(axis=1)
        disc *= mdp.gamma
    return g


class TestSoftmax:
    def test_score_at_zero(self):
        pol = SoftmaxPolicy(np.zeros(2), tabular_action_features(2))
        np.testing.assert_allclose(score(pol, 0, 1), [0.5, 0.0])
        np.testing.assert_allclose(score(pol, 0, 0), [-0.5, 0.0])

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_score_has_zero_policy_mean(self, seed):
        _, pol = random_instance(seed)
        mean = np.einsum("sa,sad->sd", pol.probs, score_table(pol))
        np.testing.assert_allclose(mean, 0.0, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_score_is_gradient_of_log_prob(self, seed):
        _, pol = random_instance(seed)
        for s in range(3):
            for a in range(2):
                fd = finite_difference(lambda th: log_prob(pol.with_theta(th), s, a), pol.theta)
                np.testing.assert_allclose(score(pol, s, a), fd, atol=1e-8)

    def test_probs_stable_for_large_logits(self):
        pol = SoftmaxPolicy([800.0], np.array([[[0.0], [1.0]]]))
        np.testing.assert_allclose(pol.probs, [[0.0, 1.0]])

    def test_tabular_feature_layout(self):
        x = tabular_action_features(3, 3)
        assert x.shape == (3, 3, 6)
        assert np.all(x[:, 0] == 0)
        assert x[2, 2, 5] == 1.0

    def test_shape_check(self):
        with pytest.raises(DimensionMismatch):
            SoftmaxPolicy(np.zeros(3), tabular_action_features(2))


class TestObjectives:
    def test_one_state_closed_form(self):
        m = instances.one_state(gamma=0.5, reward=1.0)
        pol = SoftmaxPolicy(np.zeros(1), np.zeros((1, 1, 1)))
        assert exact_j(m, pol, 0) == pytest.approx(2.0)
        # U = (1 + 2 g V) / (1 - g^2) = 3 / 0.75
        assert exact_u(m, pol, 0) == pytest.approx(4.0)

    def test_monte_carlo_moments(self):
        m, pol, _, _ = instances.actor_reference()
        V, U = value_functions(m, pol.probs)
        g = monte_carlo_returns(m, pol.probs, 0, 200_000, 50, np.random.default_rng(5))
        se = g.std() / np.sqrt(len(g))
        se2 = (g**2).std() / np.sqrt(len(g))
        assert abs(g.mean() - V[0]) < 4 * se
        assert abs((g**2).mean() - U[0]) < 4 * se2

    def test_flat_rewards_have_zero_gradients(self, rng):
        m = garnet_mdp(4, 2, 4, rng)
        m = validate_mdp(m.transitions, np.full((4, 2), 0.7), m.gamma)
        pol = SoftmaxPolicy(rng.normal(size=3), rng.normal(size=(4, 2, 3)))
        np.testing.assert_allclose(exact_grad_j(m, pol, 0), 0.0, atol=1e-12)
        np.testing.assert_allclose(exact_grad_u(m, pol, 0), 0.0, atol=1e-12)

    def test_identical_actions_one_state(self):
        m = validate_mdp(np.ones((1, 2, 1)), [[1.0, 1.0]], 0.5)
        pol = SoftmaxPolicy([0.3], np.array([[[0.0], [1.0]]]))
        np.testing.assert_allclose(exact_grad_u(m, pol, 0), 0.0, atol=1e-12)


class TestExactGradients:
    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 100_000), s0=st.integers(0, 2))
    def test_match_finite_differences(self, seed, s0):
        m, pol = random_instance(seed)
        fd_j = finite_difference(lambda th: exact_j(m, pol.with_theta(th), s0), pol.theta)
        fd_u = finite_difference(lambda th: exact_u(m, pol.with_theta(th), s0), pol.theta)
        np.testing.assert_allclose(exact_grad_j(m, pol, s0), fd_j, atol=1e-6)
        np.testing.assert_allclose(exact_grad_u(m, pol, s0), fd_u, atol=1e-5)

    def test_reference_instance(self):
        m, pol, _, _ = instances.actor_reference()
        pol = pol.with_theta([0.1, -0.2])
        for lam in (0.0, 0.5, 2.0):
            b = gradient_bundle(m, pol, 0, lam)
            fd = finite_difference(lambda th: gradient_bundle(m, pol.with_theta(th), 0, lam).lagrangian, pol.theta)
            np.testing.assert_allclose(b.grad_l, fd, atol=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 100_000))
    def test_norm_bounds(self, seed):
        m, pol = random_instance(seed)
        c = instance_constants(m, pol.action_features, 1.0, kappa=1.0, rho=0.5)
        assert np.linalg.norm(exact_grad_j(m, pol, 0)) <= c.grad_j_bound
        assert np.linalg.norm(exact_grad_u(m, pol, 0)) <= c.grad_u_bound

    def test_lagrangian_identity(self, rng):
        gj, gu = rng.normal(size=3), rng.normal(size=3)
        np.testing.assert_allclose(grad_lagrangian(0.7, gj, gu, 2.0), -gj + 2.0 * (gu - 1.4 * gj))
        assert lagrangian(1.0, 3.0, 0.5, threshold=1.0) == pytest.approx(-1.0 + 0.5)

    def test_reward_shift_leaves_variance_gradient(self, rng):
        """Adding a constant to every reward shifts J but not the variance."""
        m, pol = random_instance(17)
        shifted = validate_mdp(m.transitions, m.rewards + 0.3, m.gamma)

        def var_grad(mdp):
            b = gradient_bundle(mdp, pol, 0, 1.0)
            return b.grad_u - 2 * b.j * b.grad_j

        np.testing.assert_allclose(var_grad(m), var_grad(shifted), atol=1e-10)


class TestFiniteDifference:
    def test_exact_on_quadratics(self, rng):
        A = rng.normal(size=(3, 3))
        b = rng.normal(size=3)
        theta = rng.normal(size=3)
        fd = finite_difference(lambda x: x @ A @ x + b @ x, theta, h=0.1)
        np.testing.assert_allclose(fd, (A + A.T) @ theta + b, atol=1e-12)

    def test_second_order_error(self):
        f = np.exp
        e1 = abs(finite_difference(lambda x: f(x[0]), [0.0], h=1e-2)[0] - 1.0)
        e2 = abs(finite_difference(lambda x: f(x[0]), [0.0], h=5e-3)[0] - 1.0)
        assert e1 / e2 == pytest.approx(4.0, rel=1e-3)


class TestConstants:
    def test_softmax_constants(self):
        assert softmax_constants(3.0 * tabular_action_features(2)) == (6.0, 9.0, 3.0)

    def test_c_nu_example(self):
        assert c_nu_constant(2.0, 1.0, 0.5) == pytest.approx(3.0)
        assert c_nu_constant(2.0, 1.0, 0.5, form="full") == pytest.approx(6.0)

    @pytest.mark.parametrize("kappa,rho", [(1.0, 1.0), (1.0, 0.0), (0.0, 0.5)])
    def test_invalid_mixing(self, kappa, rho):
        with pytest.raises(InvalidMixingConstants):
            c_nu_constant(1.0, kappa, rho)

    def test_l_j_example(self):
        # C_nu = (2/3)(1 + 0 + 2) / 2 = 1, so L_J = 2 (4 + 1)
        c = lipschitz_constants(1.0, 0.5, 1.0, 1.0, 2.0 / 3.0, 1.0, 0.5, lam=0.0)
        assert c.c_nu == pytest.approx(1.0)
        assert c.l_j == pytest.approx(10.0)

    def test_lambda_zero_reduces_to_value(self):
        c = lipschitz_constants(1.0, 0.5, 2.0, 1.0, 1.0, 1.0, 0.5, lam=0.0)
        assert c.l_o == c.l_j

    def test_constants_grow_with_lambda(self):
        cs = [lipschitz_constants(1.0, 0.5, 2.0, 1.0, 1.0, 1.0, 0.5, lam=lam) for lam in (0.0, 1.0, 2.0)]
        assert cs[0].l_o < cs[1].l_o < cs[2].l_o
        assert cs[0].k1 < cs[1].k1 < cs[2].k1

    def test_doeblin(self):
        m = instances.actor_reference_mdp()
        kappa, rho = doeblin_mixing(m)
        assert kappa == 1.0
        assert rho == pytest.approx(1 - (0.5 + 0.1))

    def test_doeblin_without_overlap(self):
        with pytest.raises(InvalidMixingConstants):
            doeblin_mixing(instances.two_cycle())
