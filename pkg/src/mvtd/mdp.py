"""Finite MDPs, policy-induced chains, exact evaluation and i.i.d. sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import (
    ConstraintViolation,
    DimensionMismatch,
    FileParseError,
    GammaOutOfRange,
    NegativeProbability,
    NonStochasticRow,
    NotIrreducible,
    SingularSystem,
)

ROW_SUM_TOL = 1e-9
IRREDUCIBLE_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mdp:
    transitions: np.ndarray  # P[s, a, s']
    rewards: np.ndarray  # r[s, a]
    gamma: float
    r_max: float

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "gamma": self.gamma,
            "r_max": self.r_max,
            "transitions": self.transitions.tolist(),
            "rewards": self.rewards.tolist(),
        }


def validate_mdp(transitions, rewards, gamma: float, r_max: float | None = None) -> Mdp:
    """Check shapes, stochasticity and the reward bound; fill in ``r_max`` if absent."""
    P = np.asarray(transitions, dtype=float)
    r = np.asarray(rewards, dtype=float)
    if P.ndim != 3 or P.shape[0] != P.shape[2]:
        raise DimensionMismatch(f"transitions must have shape (S, A, S), got {P.shape}")
    if r.shape != P.shape[:2]:
        raise DimensionMismatch(f"rewards shape {r.shape} does not match transitions {P.shape[:2]}")
    if P.shape[0] < 1 or P.shape[1] < 1:
        raise DimensionMismatch("need at least one state and one action")
    if not np.all(np.isfinite(P)) or not np.all(np.isfinite(r)):
        raise DimensionMismatch("non-finite entries in transitions or rewards")
    if np.any(P < 0):
        s, a, sn = np.argwhere(P < 0)[0]
        raise NegativeProbability(f"P[{sn} | {s}, {a}] = {P[s, a, sn]} < 0")
    sums = P.sum(axis=2)
    bad = np.abs(sums - 1.0) > ROW_SUM_TOL
    if np.any(bad):
        s, a = np.argwhere(bad)[0]
        raise NonStochasticRow(f"row P[. | {s}, {a}] sums to {sums[s, a]!r}")
    gamma = float(gamma)
    if not 0.0 < gamma < 1.0:
        raise GammaOutOfRange(f"gamma must lie in (0, 1), got {gamma}")
    observed = float(np.max(np.abs(r)))
    if r_max is None:
        r_max = observed
    r_max = float(r_max)
    if observed > r_max:
        raise ConstraintViolation(f"|r(s,a)| reaches {observed} > r_max = {r_max}")
    return Mdp(_frozen(P), _frozen(r), gamma, r_max)


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    probs: np.ndarray  # pi[s, a]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2:
            raise DimensionMismatch(f"policy table must be 2-D, got shape {p.shape}")
        if np.any(p < 0):
            raise NegativeProbability("policy has negative entries")
        if np.any(np.abs(p.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise NonStochasticRow("policy rows must sum to 1")
        object.__setattr__(self, "probs", _frozen(p))


def uniform_policy(mdp: Mdp) -> TabularPolicy:
    return TabularPolicy(np.full((mdp.num_states, mdp.num_actions), 1.0 / mdp.num_actions))


@dataclass(frozen=True, eq=False)
class OnPolicyChain:
    p_pi: np.ndarray
    chi: np.ndarray
    r_vec: np.ndarray
    r_tilde: np.ndarray

    @property
    def statdist(self) -> np.ndarray:
        return np.diag(self.chi)

    @property
    def d_r(self) -> np.ndarray:
        return np.diag(self.r_vec)

    @property
    def num_states(self) -> int:
        return self.p_pi.shape[0]


def stationary_distribution(p_pi: np.ndarray) -> np.ndarray:
    """Solve chi^T P = chi^T, sum(chi) = 1 through the stacked linear system.

    Irreducibility is checked on the support graph before solving, so a
    reducible chain never slips through as a min-norm least-squares answer.
    """
    n = p_pi.shape[0]
    n_comp, _ = connected_components(p_pi > 0, directed=True, connection="strong")
    if n_comp != 1:
        raise NotIrreducible(f"induced chain has {n_comp} strongly connected components")
    a = np.vstack([p_pi.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    chi, *_ = np.linalg.lstsq(a, b, rcond=None)
    if np.min(chi) < IRREDUCIBLE_TOL:
        raise NotIrreducible(f"stationary distribution has entry {np.min(chi):.3e}")
    return chi


def induced_chain(mdp: Mdp, policy: TabularPolicy) -> OnPolicyChain:
    pi = policy.probs
    if pi.shape != (mdp.num_states, mdp.num_actions):
        raise DimensionMismatch(f"policy shape {pi.shape} does not match MDP")
    p_pi = np.einsum("sa,sat->st", pi, mdp.transitions)
    chi = stationary_distribution(p_pi)
    r_vec = np.sum(pi * mdp.rewards, axis=1)
    r_tilde = np.sum(pi * mdp.rewards**2, axis=1)
    return OnPolicyChain(_frozen(p_pi), _frozen(chi), _frozen(r_vec), _frozen(r_tilde))


def _solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc


def exact_value(chain: OnPolicyChain, gamma: float) -> np.ndarray:
    """V = (I - gamma P)^-1 r."""
    n = chain.num_states
    return _solve(np.eye(n) - gamma * chain.p_pi, chain.r_vec)


def exact_square_value(chain: OnPolicyChain, gamma: float, V: np.ndarray) -> np.ndarray:
    """U = (I - gamma^2 P)^-1 (r_tilde + 2 gamma D_R P V)."""
    n = chain.num_states
    rhs = chain.r_tilde + 2.0 * gamma * chain.r_vec * (chain.p_pi @ V)
    return _solve(np.eye(n) - gamma**2 * chain.p_pi, rhs)


def variance(V: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Return variance U - V^2, clipped at zero for reporting."""
    return np.maximum(U - V * V, 0.0)


# --- sampling ---------------------------------------------------------------
class Transition(NamedTuple):
    s: int
    a: int
    r: float
    s_next: int


def _cdf_rows(p: np.ndarray) -> np.ndarray:
    """Cumulative tables whose entry at the last positive-mass index is exactly 1.

    Inverse-CDF lookup (first j with u < cdf[j]) then never lands on a
    zero-probability outcome, whatever the rounding in the cumulative sum.
    """
    p = np.asarray(p, dtype=float)
    cdf = np.cumsum(p, axis=-1)
    flat_p = p.reshape(-1, p.shape[-1])
    flat_c = cdf.reshape(-1, p.shape[-1])
    for row, c in zip(flat_p, flat_c):
        last = np.flatnonzero(row > 0)[-1]
        c[last:] = 1.0
    return flat_c.reshape(p.shape)


class TransitionSampler:
    """Draws (s, a, r, s') with s ~ chi, a ~ pi(.|s), s' ~ P(.|s,a).

    Each draw consumes exactly three uniforms from the generator, in
    row-major order, so drawing ``n`` at once or one at a time yields the
    same sequence.
    """

    def __init__(self, mdp: Mdp, policy: TabularPolicy, chain: OnPolicyChain):
        self.rewards = mdp.rewards
        self.chi_cdf = _cdf_rows(chain.chi)
        self.pi_cdf = _cdf_rows(policy.probs)
        self.p_cdf = _cdf_rows(mdp.transitions)

    def lookup(self, u: np.ndarray):
        """Map an (n, 3) block of uniforms to transitions (s, a, r, s_next)."""
        s = np.searchsorted(self.chi_cdf, u[:, 0], side="right")
        pi_rows = self.pi_cdf[s]
        a = np.sum(pi_rows <= u[:, 1:2], axis=1)
        p_rows = self.p_cdf[s, a]
        s_next = np.sum(p_rows <= u[:, 2:3], axis=1)
        return s, a, self.rewards[s, a], s_next

    def draw(self, rng: np.random.Generator, n: int):
        return self.lookup(rng.random((n, 3)))


def sample_iid_transition(
    mdp: Mdp, policy: TabularPolicy, chain: OnPolicyChain, rng: np.random.Generator
) -> Transition:
    s, a, r, sn = TransitionSampler(mdp, policy, chain).draw(rng, 1)
    return Transition(int(s[0]), int(a[0]), float(r[0]), int(sn[0]))


def transition_support(mdp: Mdp, policy: TabularPolicy, chain: OnPolicyChain):
    """Enumerate every (s, a, s') with positive probability chi(s) pi(a|s) P(s'|s,a).

    Returns arrays ``s, a, r, s_next, prob``; expectations over the i.i.d.
    observation model are exact weighted sums over these.
    """
    prob = chain.chi[:, None, None] * policy.probs[:, :, None] * mdp.transitions
    s, a, sn = np.nonzero(prob > 0)
    return s, a, mdp.rewards[s, a], sn, prob[s, a, sn]


# --- generators and files ---------------------------------------------------
def chain_mdp(length: int, slip: float, gamma: float = 0.5, r_max: float = 1.0) -> Mdp:
    """Reflecting random walk with actions left (0) and right (1).

    The intended move happens with probability ``1 - slip``, the opposite
    move with probability ``slip``; moves off either end stay put.  Rewards
    ramp linearly from 0 at the left end to ``r_max`` at the right end.
    """
    if length < 1:
        raise DimensionMismatch("chain length must be positive")
    if not 0.0 <= slip <= 1.0:
        raise DimensionMismatch(f"slip must lie in [0, 1], got {slip}")
    P = np.zeros((length, 2, length))
    for s in range(length):
        left, right = max(s - 1, 0), min(s + 1, length - 1)
        P[s, 0, left] += 1.0 - slip
        P[s, 0, right] += slip
        P[s, 1, right] += 1.0 - slip
        P[s, 1, left] += slip
    if length == 1:
        r = np.full((1, 2), r_max)
    else:
        r = np.repeat((r_max * np.arange(length) / (length - 1))[:, None], 2, axis=1)
    return validate_mdp(P, r, gamma, r_max)


def garnet_mdp(
    num_states: int,
    num_actions: int,
    branching: int,
    rng: np.random.Generator,
    gamma: float = 0.5,
    r_max: float = 1.0,
) -> Mdp:
    """Random MDP: ``branching`` distinct successors per (s, a) with uniform-normalized weights."""
    if not 1 <= branching <= num_states:
        raise DimensionMismatch(f"branching must lie in [1, {num_states}], got {branching}")
    P = np.zeros((num_states, num_actions, num_states))
    for s in range(num_states):
        for a in range(num_actions):
            succ = rng.choice(num_states, size=branching, replace=False)
            w = rng.uniform(size=branching)
            P[s, a, succ] = w / w.sum()
    r = rng.uniform(-r_max, r_max, size=(num_states, num_actions))
    mdp = validate_mdp(P, r, gamma, r_max)
    induced_chain(mdp, uniform_policy(mdp))  # raises NotIrreducible
    return mdp


def mdp_from_dict(data: dict) -> Mdp:
    try:
        mdp = validate_mdp(data["transitions"], data["rewards"], data["gamma"], data.get("r_max"))
    except KeyError as exc:
        raise FileParseError(f"missing field {exc.args[0]!r}") from exc
    for field, value in (("num_states", mdp.num_states), ("num_actions", mdp.num_actions)):
        if field in data and int(data[field]) != value:
            raise FileParseError(f"{field} = {data[field]} disagrees with array shapes ({value})")
    return mdp


def load_mdp(path) -> Mdp:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FileParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise FileParseError(str(exc)) from exc
    return mdp_from_dict(data)


def save_mdp(mdp: Mdp, path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict(), indent=1) + "\n")


def generate_mdp(kind: str, params: dict | None = None, rng: np.random.Generator | None = None) -> Mdp:
    params = dict(params or {})
    if kind == "chain":
        mdp = chain_mdp(**params)
        induced_chain(mdp, uniform_policy(mdp))
        return mdp
    if kind == "garnet":
        if rng is None:
            rng = np.random.default_rng(params.pop("seed", 0))
        else:
            params.pop("seed", None)
        return garnet_mdp(rng=rng, **params)
    if kind == "file":
        return load_mdp(params["path"])
    raise FileParseError(f"unknown MDP kind {kind!r}")
