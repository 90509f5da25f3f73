"""Softmax policies, exact policy gradients of the value and square-value, and smoothness constants."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConstraintViolation, DimensionMismatch, InvalidMixingConstants
from .mdp import Mdp, TabularPolicy, induced_chain


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """pi(a|s) proportional to exp(theta . x(s, a))."""

    theta: np.ndarray  # (d,)
    action_features: np.ndarray  # (S, A, d)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        x = np.array(self.action_features, dtype=float)
        if x.ndim != 3 or x.shape[2] != theta.shape[0]:
            raise DimensionMismatch(f"action features {x.shape} do not match theta of length {theta.shape[0]}")
        theta.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "action_features", x)

    @property
    def d(self) -> int:
        return self.theta.shape[0]

    def with_theta(self, theta) -> "SoftmaxPolicy":
        return SoftmaxPolicy(theta, self.action_features)

    @property
    def probs(self) -> np.ndarray:
        logits = self.action_features @ self.theta
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def tabular(self) -> TabularPolicy:
        return TabularPolicy(self.probs)


def tabular_action_features(num_states: int, num_actions: int = 2) -> np.ndarray:
    """x(s, 0) = 0 and x(s, a) = one-hot of (s, a - 1) otherwise; d = S (A - 1)."""
    d = num_states * (num_actions - 1)
    x = np.zeros((num_states, num_actions, d))
    for s in range(num_states):
        for a in range(1, num_actions):
            x[s, a, s * (num_actions - 1) + a - 1] = 1.0
    return x


def score_table(policy: SoftmaxPolicy) -> np.ndarray:
    """psi(s, a) = x(s, a) - sum_b pi(b|s) x(s, b), shape (S, A, d)."""
    x = policy.action_features
    mean = np.einsum("sa,sad->sd", policy.probs, x)
    return x - mean[:, None, :]


def score(policy: SoftmaxPolicy, s: int, a: int) -> np.ndarray:
    return score_table(policy)[s, a]


def log_prob(policy: SoftmaxPolicy, s: int, a: int) -> float:
    logits = policy.action_features[s] @ policy.theta
    m = logits.max()
    return float(logits[a] - m - math.log(np.exp(logits - m).sum()))


# --- exact objectives and gradients ------------------------------------------
def _p_pi(mdp: Mdp, probs: np.ndarray) -> np.ndarray:
    return np.einsum("sa,sat->st", probs, mdp.transitions)


def value_functions(mdp: Mdp, probs: np.ndarray):
    """(V, U) for every start state under the tabular policy ``probs``."""
    n = mdp.num_states
    g = mdp.gamma
    P = _p_pi(mdp, probs)
    r = np.sum(probs * mdp.rewards, axis=1)
    r2 = np.sum(probs * mdp.rewards**2, axis=1)
    V = np.linalg.solve(np.eye(n) - g * P, r)
    U = np.linalg.solve(np.eye(n) - g**2 * P, r2 + 2 * g * r_cross(mdp, probs, V))
    return V, U


def r_cross(mdp: Mdp, probs: np.ndarray, V: np.ndarray) -> np.ndarray:
    """sum_a pi(a|s) r(s, a) sum_s' P(s'|s, a) V(s')."""
    return np.sum(probs * mdp.rewards * (mdp.transitions @ V), axis=1)


def exact_j(mdp: Mdp, policy: SoftmaxPolicy, s0: int) -> float:
    return float(value_functions(mdp, policy.probs)[0][s0])


def exact_u(mdp: Mdp, policy: SoftmaxPolicy, s0: int) -> float:
    return float(value_functions(mdp, policy.probs)[1][s0])


def visitation(mdp: Mdp, probs: np.ndarray, s0: int, disc: float) -> np.ndarray:
    """Normalized disc-discounted state visitation from s0: (1 - disc) e_s0^T (I - disc P)^-1."""
    n = mdp.num_states
    e = np.zeros(n)
    e[s0] = 1.0
    return (1 - disc) * np.linalg.solve(np.eye(n) - disc * _p_pi(mdp, probs).T, e)


def _check_chain(mdp: Mdp, policy: SoftmaxPolicy) -> None:
    induced_chain(mdp, policy.tabular())  # raises NotIrreducible


def action_values(mdp: Mdp, probs: np.ndarray, V: np.ndarray, U: np.ndarray):
    """Q(s, a) and the square-value analogue W(s, a)."""
    g = mdp.gamma
    pv = mdp.transitions @ V
    pu = mdp.transitions @ U
    r = mdp.rewards
    return r + g * pv, r * r + 2 * g * r * pv + g**2 * pu


def grad_v_all(mdp: Mdp, policy: SoftmaxPolicy, V: np.ndarray | None = None) -> np.ndarray:
    """Gradient of V(s) for every start state s, shape (S, d)."""
    probs = policy.probs
    if V is None:
        V = value_functions(mdp, probs)[0]
    Q = mdp.rewards + mdp.gamma * (mdp.transitions @ V)
    B = np.einsum("sa,sad->sd", probs * Q, score_table(policy))
    n = mdp.num_states
    return np.linalg.solve(np.eye(n) - mdp.gamma * _p_pi(mdp, probs), B)


def exact_grad_j(mdp: Mdp, policy: SoftmaxPolicy, s0: int) -> np.ndarray:
    """Policy-gradient theorem: 1/(1 - g) E_nu[psi Q] with nu the g-discounted visitation from s0."""
    _check_chain(mdp, policy)
    probs = policy.probs
    V, U = value_functions(mdp, probs)
    Q, _ = action_values(mdp, probs, V, U)
    nu = visitation(mdp, probs, s0, mdp.gamma)
    psi = score_table(policy)
    return np.einsum("s,sa,sad->d", nu, probs * Q, psi) / (1 - mdp.gamma)


def exact_grad_u(mdp: Mdp, policy: SoftmaxPolicy, s0: int) -> np.ndarray:
    """Gradient of U(s0) through the g^2-discounted visitation.

    The propagated term carries the immediate reward: differentiating
    U(s) = sum_a pi [r^2 + 2 g r P V + g^2 P U] leaves 2 g r(s, a) P grad V.
    """
    _check_chain(mdp, policy)
    g = mdp.gamma
    probs = policy.probs
    V, U = value_functions(mdp, probs)
    _, W = action_values(mdp, probs, V, U)
    psi = score_table(policy)
    grad_v = grad_v_all(mdp, policy, V)
    nu2 = visitation(mdp, probs, s0, g**2)
    t1 = np.einsum("s,sa,sad->d", nu2, probs * W, psi)
    t2 = np.einsum("s,sa,sat,td->d", nu2, probs * mdp.rewards, mdp.transitions, grad_v)
    return (t1 + 2 * g * t2) / (1 - g**2)


def grad_lagrangian(j: float, grad_j: np.ndarray, grad_u: np.ndarray, lam: float) -> np.ndarray:
    return -grad_j + lam * (grad_u - 2 * j * grad_j)


def lagrangian(j: float, u: float, lam: float, threshold: float = 0.0) -> float:
    return -j + lam * (u - j * j - threshold)


@dataclass(frozen=True, eq=False)
class GradientBundle:
    j: float
    u: float
    grad_j: np.ndarray
    grad_u: np.ndarray
    grad_l: np.ndarray
    lam: float
    variance_threshold: float = 0.0

    @property
    def variance(self) -> float:
        return max(self.u - self.j**2, 0.0)

    @property
    def lagrangian(self) -> float:
        return lagrangian(self.j, self.u, self.lam, self.variance_threshold)


def gradient_bundle(mdp: Mdp, policy: SoftmaxPolicy, s0: int, lam: float, threshold: float = 0.0) -> GradientBundle:
    V, U = value_functions(mdp, policy.probs)
    gj = exact_grad_j(mdp, policy, s0)
    gu = exact_grad_u(mdp, policy, s0)
    j = float(V[s0])
    return GradientBundle(j, float(U[s0]), gj, gu, grad_lagrangian(j, gj, gu, lam), lam, threshold)


def finite_difference(f, theta, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(theta + h e_i) - f(theta - h e_i)) / 2h."""
    if h <= 0:
        raise ConstraintViolation("h must be positive")
    theta = np.asarray(theta, dtype=float)
    out = np.empty_like(theta)
    for i in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return out


# --- smoothness constants -----------------------------------------------------
def softmax_constants(action_features: np.ndarray):
    """(C_psi, L_psi, C_pi) for softmax policies with X = max |x(s, a)|.

    |psi| <= 2X; the Jacobian of psi is minus the action-feature covariance,
    whose norm is at most X^2; and the L1 distance between action
    distributions grows at most at rate sqrt(max eigenvalue of that
    covariance) <= X per unit of |theta1 - theta2|.
    """
    X = float(np.max(np.linalg.norm(action_features, axis=2)))
    return 2 * X, X * X, X


def doeblin_mixing(mdp: Mdp):
    """(kappa, rho) valid for every policy from the Doeblin minorization of P.

    With eps = sum_j min_{s,a} P(j|s,a) every induced chain satisfies
    sup_s TV(P^t(s, .), chi) <= (1 - eps)^t.
    """
    eps = float(np.sum(np.min(mdp.transitions.reshape(-1, mdp.num_states), axis=0)))
    if eps <= 0:
        raise InvalidMixingConstants("transition rows share no common mass; supply kappa and rho")
    return 1.0, min(max(1.0 - eps, 1e-12), 1.0 - 1e-12)


@dataclass(frozen=True)
class SmoothnessConstants:
    c_psi: float
    l_psi: float
    c_pi: float
    kappa: float
    rho: float
    c_nu: float
    l_j: float
    l_u: float
    l_o: float
    k1: float
    c1: float
    grad_j_bound: float
    grad_u_bound: float


def c_nu_constant(c_pi: float, kappa: float, rho: float, form: str = "half") -> float:
    """Lipschitz constant of the stationary distribution; ``form="full"`` drops the 1/2."""
    if not 0 < rho < 1:
        raise InvalidMixingConstants(f"rho must lie in (0, 1), got {rho}")
    if kappa <= 0:
        raise InvalidMixingConstants(f"kappa must be positive, got {kappa}")
    ceil_term = math.ceil(math.log(1 / kappa) / math.log(rho) - 1e-12)
    body = c_pi * (1 + ceil_term + 1 / (1 - rho))
    if form == "half":
        return 0.5 * body
    if form == "full":
        return body
    raise ConstraintViolation(f"unknown C_nu form {form!r}")


def lipschitz_constants(
    r_max: float,
    gamma: float,
    c_psi: float,
    l_psi: float,
    c_pi: float,
    kappa: float,
    rho: float,
    lam: float,
    c_nu_form: str = "half",
) -> SmoothnessConstants:
    if r_max <= 0:
        raise ConstraintViolation("R_max must be positive")
    if lam < 0:
        raise ConstraintViolation("lambda must be nonnegative")
    g, R = gamma, r_max
    c_nu = c_nu_constant(c_pi, kappa, rho, c_nu_form)
    l_j = R / (1 - g) * (4 * c_nu * c_psi + l_psi)
    l_u = (R**2 / (1 - g) ** 2 * (l_psi + 4 * c_psi * c_nu * (1 + g / R)) + 2 * l_j) / (1 - g**2)
    l_o = l_j * (1 + 2 * lam * R / (1 - g) ** 2 + 2 * lam * (R * c_psi / (1 - g) ** 2) ** 2) + lam * l_u
    grad_j_bound = R * c_psi / (1 - g) ** 2
    grad_u_bound = (c_psi * R + 2 * g * R * c_psi) / ((1 - g**2) * (1 - g) ** 2)
    k1 = grad_j_bound + 2 * lam * R * c_psi / (1 - g) ** 3 + lam * grad_u_bound
    c1 = 2 * R / (1 - g) * (1 + lam * R / (1 - g))
    return SmoothnessConstants(c_psi, l_psi, c_pi, kappa, rho, c_nu, l_j, l_u, l_o, k1, c1,
                               grad_j_bound, grad_u_bound)


def instance_constants(mdp: Mdp, action_features: np.ndarray, lam: float, *, kappa=None, rho=None,
                       c_nu_form: str = "half") -> SmoothnessConstants:
    """Smoothness constants for a softmax policy class on ``mdp``.

    Mixing constants default to the Doeblin bound.
    """
    c_psi, l_psi, c_pi = softmax_constants(action_features)
    if kappa is None or rho is None:
        kappa, rho = doeblin_mixing(mdp)
    return lipschitz_constants(mdp.r_max, mdp.gamma, c_psi, l_psi, c_pi, kappa, rho, lam, c_nu_form)
