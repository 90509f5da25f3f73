"""SPSA actor with tail-averaged TD critics for the mean-variance Lagrangian."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .critic import CriticConfig, run_critic
from .errors import ConstraintViolation, StepSizeTooLarge
from .features import FeatureSet
from .gradients import SoftmaxPolicy, gradient_bundle
from .mdp import Mdp, induced_chain
from .system import build_critic_system, c_constant


def theorem6_schedule(n: int):
    """(alpha, p, m) = (n^-3/4, n^-1/4, n)."""
    if n < 1:
        raise ConstraintViolation("n must be positive")
    return n ** -0.75, n ** -0.25, n


@dataclass(frozen=True)
class ActorConfig:
    n: int
    lam: float = 0.0
    s0: int = 0
    seed: int = 0
    alpha: float | None = None
    p: float | None = None
    m: int | None = None
    k: int | None = None
    critic_beta: float | None = None  # explicit critic step size
    mu_floor: float | None = None  # global step size mu_floor / c when critic_beta is unset
    recompute_beta: bool = False  # per-iteration beta_max of the two visited policies
    variance_threshold: float = 0.0
    critic_init: str = "zero"  # "zero" or "warm" (previous unperturbed tail average)

    def resolved(self) -> "ActorConfig":
        alpha, p, m = theorem6_schedule(self.n)
        m = self.m if self.m is not None else m
        out = ActorConfig(
            n=self.n, lam=self.lam, s0=self.s0, seed=self.seed,
            alpha=self.alpha if self.alpha is not None else alpha,
            p=self.p if self.p is not None else p,
            m=m, k=self.k if self.k is not None else m // 2,
            critic_beta=self.critic_beta, mu_floor=self.mu_floor,
            recompute_beta=self.recompute_beta, variance_threshold=self.variance_threshold,
            critic_init=self.critic_init,
        )
        out.validate()
        return out

    def validate(self) -> None:
        if self.n < 1:
            raise ConstraintViolation("n must be positive")
        if self.p is not None and self.p <= 0:
            raise ConstraintViolation("p must be positive")
        if self.alpha is not None and self.alpha <= 0:
            raise ConstraintViolation("alpha must be positive")
        if self.m is not None and self.m < 2:
            raise ConstraintViolation("critic batch m must be at least 2")
        if self.k is not None and self.m is not None and not 0 <= self.k < self.m:
            raise ConstraintViolation("critic tail index k must satisfy 0 <= k < m")
        if self.lam < 0:
            raise ConstraintViolation("lambda must be nonnegative")
        if self.critic_init not in ("zero", "warm"):
            raise ConstraintViolation(f"critic_init must be 'zero' or 'warm', got {self.critic_init!r}")


def sample_perturbation(d: int, rng: np.random.Generator) -> np.ndarray:
    """Rademacher vector in {-1, +1}^d."""
    if d < 1:
        raise ConstraintViolation("d must be positive")
    return 2.0 * rng.integers(0, 2, size=d) - 1.0


def spsa_gradient(f_plus: float, f_base: float, p: float, delta: np.ndarray) -> np.ndarray:
    """One-sided estimate (f_plus - f_base) / (p delta_i)."""
    if p <= 0:
        raise ConstraintViolation("p must be positive")
    return (f_plus - f_base) / (p * np.asarray(delta, dtype=float))


def actor_step(theta, g_j, g_u, j_hat: float, lam: float, alpha: float) -> np.ndarray:
    """Ascent on -L: theta + alpha (g_J - lam (g_U - 2 J g_J))."""
    g_j = np.asarray(g_j, dtype=float)
    return np.asarray(theta, dtype=float) + alpha * (g_j - lam * (np.asarray(g_u, dtype=float) - 2 * j_hat * g_j))


def averaged_spsa(f, theta, p: float) -> np.ndarray:
    """Mean of the one-sided estimate over all 2^d perturbations, with exact f."""
    theta = np.asarray(theta, dtype=float)
    d = theta.shape[0]
    base = f(theta)
    total = np.zeros(d)
    signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * d, indexing="ij")).reshape(d, -1).T
    for delta in signs:
        total += spsa_gradient(f(theta + p * delta), base, p, delta)
    return total / len(signs)


@dataclass(frozen=True, eq=False)
class ActorResult:
    theta_trace: np.ndarray  # (n, d): theta_1 .. theta_n
    theta_r: np.ndarray
    r_index: int
    grad_norm_trace: np.ndarray
    config: ActorConfig
    diagnostics: dict = field(repr=False)

    @property
    def theta_final(self) -> np.ndarray:
        """The iterate produced by the last update (theta_{n+1})."""
        return self.diagnostics["theta_next"]

    @property
    def expected_grad_norm_sq(self) -> float:
        """E_R |grad L(theta_R)|^2 given the trajectory: the mean of the trace."""
        return float(self.grad_norm_trace.mean())


def _critic_beta(mdp: Mdp, features: FeatureSet, config: ActorConfig) -> float | None:
    if config.critic_beta is not None:
        return config.critic_beta
    if config.mu_floor is not None:
        return config.mu_floor / c_constant(features.phi_v_max, features.phi_u_max, mdp.gamma, mdp.r_max)
    if config.recompute_beta:
        return None
    raise ConstraintViolation("set one of critic_beta, mu_floor or recompute_beta")


def run_mv_spsa_ac(
    mdp: Mdp,
    policy_template: SoftmaxPolicy,
    features: FeatureSet,
    config: ActorConfig,
    *,
    record_critic_errors: bool = True,
) -> ActorResult:
    """Run n actor iterations, each driven by two fresh critics (base and perturbed policy)."""
    cfg = config.resolved()
    rng = np.random.default_rng([cfg.seed])
    beta_global = _critic_beta(mdp, features, cfg)
    theta = policy_template.theta.copy()
    d = theta.shape[0]
    q = features.q
    phi_v0 = features.phi_v[cfg.s0]
    phi_u0 = features.phi_u[cfg.s0]

    thetas = np.empty((cfg.n, d))
    grad_sq = np.empty(cfg.n)
    diag = {key: np.empty(cfg.n) for key in ("j_hat", "u_hat", "critic_err_base", "critic_err_pert", "beta")}
    diag["g_j"] = np.empty((cfg.n, d))
    diag["g_u"] = np.empty((cfg.n, d))
    diag["delta"] = np.empty((cfg.n, d))

    w_start = None
    for t in range(cfg.n):
        thetas[t] = theta
        pol = policy_template.with_theta(theta)
        delta = sample_perturbation(d, rng)
        pol_plus = policy_template.with_theta(theta + cfg.p * delta)
        tab, tab_plus = pol.tabular(), pol_plus.tabular()
        chain, chain_plus = induced_chain(mdp, tab), induced_chain(mdp, tab_plus)
        systems = None
        if record_critic_errors or beta_global is None:
            systems = (build_critic_system(chain, features, mdp.gamma, mdp.r_max),
                       build_critic_system(chain_plus, features, mdp.gamma, mdp.r_max))
        beta = beta_global
        if beta is None:
            beta = min(systems[0].beta_max, systems[1].beta_max)
        elif systems is not None and cfg.critic_beta is None and cfg.mu_floor is not None:
            ceiling = min(systems[0].beta_max, systems[1].beta_max)
            if beta > ceiling * (1 + 1e-12):
                raise StepSizeTooLarge(
                    f"mu_floor step {beta:.3e} exceeds beta_max {ceiling:.3e} of a visited policy"
                )

        ccfg = CriticConfig(t=cfg.m, k=cfg.k, beta=beta, override_step_size=True, w0=w_start)
        base = run_critic(mdp, tab, features, _with_seed(ccfg, (cfg.seed, t, 0)), chain=chain,
                          system=systems[0] if systems else None)
        plus = run_critic(mdp, tab_plus, features, _with_seed(ccfg, (cfg.seed, t, 1)), chain=chain_plus,
                          system=systems[1] if systems else None)
        if cfg.critic_init == "warm":
            w_start = tuple(base.w_tail)
        j_hat = float(phi_v0 @ base.w_tail[:q])
        u_hat = float(phi_u0 @ base.w_tail[q:])
        g_j = spsa_gradient(float(phi_v0 @ plus.w_tail[:q]), j_hat, cfg.p, delta)
        g_u = spsa_gradient(float(phi_u0 @ plus.w_tail[q:]), u_hat, cfg.p, delta)

        bundle = gradient_bundle(mdp, pol, cfg.s0, cfg.lam, cfg.variance_threshold)
        grad_sq[t] = float(bundle.grad_l @ bundle.grad_l)
        diag["j_hat"][t], diag["u_hat"][t], diag["beta"][t] = j_hat, u_hat, beta
        diag["g_j"][t], diag["g_u"][t], diag["delta"][t] = g_j, g_u, delta
        if systems is not None:
            diag["critic_err_base"][t] = float(np.linalg.norm(base.w_tail - systems[0].w_bar))
            diag["critic_err_pert"][t] = float(np.linalg.norm(plus.w_tail - systems[1].w_bar))
        else:
            diag["critic_err_base"][t] = diag["critic_err_pert"][t] = math.nan

        theta = actor_step(theta, g_j, g_u, j_hat, cfg.lam, cfg.alpha)

    r_index = int(rng.integers(0, cfg.n))
    diag["theta_next"] = theta
    return ActorResult(thetas, thetas[r_index].copy(), r_index, grad_sq, cfg, diag)


def _with_seed(cfg: CriticConfig, seed) -> CriticConfig:
    return replace(cfg, seed=seed)
