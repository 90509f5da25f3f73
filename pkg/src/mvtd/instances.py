"""Small named instances with hand-checkable answers, shared by the tests, the CLI and the verify suites."""

from __future__ import annotations

import numpy as np

from .features import identity_features
from .gradients import SoftmaxPolicy, tabular_action_features
from .mdp import Mdp, TabularPolicy, chain_mdp, induced_chain, uniform_policy, validate_mdp
from .system import build_critic_system

# Discount of the critic reference chain.  At gamma = 0.5 the theory step
# beta_max is so small that the start-up error is still visible at t = 2^12;
# see the README section on the acceptance suite.
CRITIC_CHAIN_GAMMA = 0.1


def one_state(gamma: float = 0.5, reward: float = 1.0) -> Mdp:
    return validate_mdp(np.ones((1, 1, 1)), [[reward]], gamma)


def two_cycle(gamma: float = 0.5) -> Mdp:
    """Deterministic 0 -> 1 -> 0 cycle with rewards (1, 0)."""
    p = np.zeros((2, 1, 2))
    p[0, 0, 1] = 1.0
    p[1, 0, 0] = 1.0
    return validate_mdp(p, [[1.0], [0.0]], gamma, r_max=1.0)


def five_state_chain(gamma: float = CRITIC_CHAIN_GAMMA, slip: float = 0.1) -> Mdp:
    return chain_mdp(5, slip, gamma=gamma)


def stochastic_pair(gamma: float = 0.5) -> Mdp:
    """Two states, one action, random transitions and distinct rewards."""
    p = np.array([[[0.3, 0.7]], [[0.6, 0.4]]])
    return validate_mdp(p, [[1.0], [-0.5]], gamma, r_max=1.0)


def zero_reward(num_states: int = 3, gamma: float = 0.5) -> Mdp:
    p = np.full((num_states, 1, num_states), 1.0 / num_states)
    return validate_mdp(p, np.zeros((num_states, 1)), gamma, r_max=0.0)


def critic_instances() -> dict[str, tuple[Mdp, TabularPolicy]]:
    """Instances used for the critic checks, each with its evaluation policy."""
    out = {}
    for name, m in (
        ("one_state", one_state()),
        ("two_cycle", two_cycle()),
        ("five_state_chain", five_state_chain()),
        ("stochastic_pair", stochastic_pair()),
    ):
        out[name] = (m, uniform_policy(m))
    return out


# Actor reference instance.  State 0 offers a safe action (reward 0.4, mostly
# stays) and a risky one (reward 0.9, half the time falls into state 1 whose
# reward is -1).  The mean-optimal policy is risky, the variance-averse one safe,
# so sweeping lambda moves the optimum.  State 1 has identical actions.
ACTOR_GAMMA = 0.5
ACTOR_FEATURE_SCALE = 6.0
ACTOR_GRID = 201


def actor_reference_mdp(gamma: float = ACTOR_GAMMA) -> Mdp:
    p = np.zeros((2, 2, 2))
    p[0, 0] = [0.9, 0.1]
    p[0, 1] = [0.5, 0.5]
    p[1, :] = [0.5, 0.5]
    rewards = np.array([[0.4, 0.9], [-1.0, -1.0]])
    return validate_mdp(p, rewards, gamma, r_max=1.0)


def actor_mu_floor(mdp: Mdp, features, grid: int = ACTOR_GRID, margin: float = 0.95) -> float:
    """margin * min mu over the policies reachable on this instance.

    Only the state-0 action probability changes the induced chain, so a 1-d grid
    over it covers every softmax policy.
    """
    mus = []
    for p_risky in np.linspace(0.0, 1.0, grid):
        pol = TabularPolicy(np.array([[1 - p_risky, p_risky], [0.5, 0.5]]))
        mus.append(build_critic_system(induced_chain(mdp, pol), features, mdp.gamma, mdp.r_max).mu)
    return margin * float(min(mus))


def actor_reference(scale: float = ACTOR_FEATURE_SCALE):
    """(mdp, softmax template at theta = 0, identity critic features, mu floor)."""
    m = actor_reference_mdp()
    feats = identity_features(2)
    template = SoftmaxPolicy(np.zeros(2), scale * tabular_action_features(2, 2))
    return m, template, feats, actor_mu_floor(m, feats)
