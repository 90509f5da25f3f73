"""The joint value / square-value linear system and the constants of the critic bounds.

Notation used throughout: ``bv``, ``bu`` are the feature row-norm bounds,
``R`` the reward bound and ``g`` the discount.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    ConstraintViolation,
    DimensionMismatch,
    MissingProjectionRadius,
    NotPositive,
    SingularSystem,
    StepSizeTooLarge,
)
from .features import FeatureSet
from .mdp import OnPolicyChain

STEP_TOL = 1e-12

BOUNDS = ("T1_last", "T2_tail", "T3_reg", "T3_reg_to_wreg", "T4_highprob", "T5_reg_highprob")


@dataclass(frozen=True, eq=False)
class CriticSystem:
    m_mat: np.ndarray
    xi: np.ndarray
    w_bar: np.ndarray
    mu: float
    iota: float
    lam_max: float
    c_const: float
    beta_max: float
    sigma_sq: float
    gamma: float
    r_max: float
    phi_v_max: float
    phi_u_max: float
    zeta: float | None = None
    w_bar_reg: np.ndarray | None = None
    c_check: float | None = None
    beta_check_max: float | None = None
    sigma_check_sq: float | None = None
    h_radius: float | None = None
    tau: float | None = None
    tau_check: float | None = None

    @property
    def q(self) -> int:
        return self.m_mat.shape[0] // 2

    def with_zeta(self, zeta: float | None) -> "CriticSystem":
        return _attach(self, zeta, self.h_radius)

    def with_h_radius(self, h_radius: float | None) -> "CriticSystem":
        return _attach(self, self.zeta, h_radius)


def assemble_system(chain: OnPolicyChain, features: FeatureSet, gamma: float):
    """Return (M, xi) for the block lower-triangular mean/second-moment system."""
    if features.num_states != chain.num_states:
        raise DimensionMismatch(
            f"features have {features.num_states} rows, chain has {chain.num_states} states"
        )
    n = chain.num_states
    pv, pu = features.phi_v, features.phi_u
    D = chain.statdist
    P = chain.p_pi
    top_left = pv.T @ D @ (np.eye(n) - gamma * P) @ pv
    bottom_left = -2.0 * gamma * pu.T @ D @ chain.d_r @ P @ pv
    bottom_right = pu.T @ D @ (np.eye(n) - gamma**2 * P) @ pu
    q = features.q
    M = np.block([[top_left, np.zeros((q, q))], [bottom_left, bottom_right]])
    xi = np.concatenate([pv.T @ (chain.chi * chain.r_vec), pu.T @ (chain.chi * chain.r_tilde)])
    return M, xi


def fixed_point(M: np.ndarray, xi: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(M, xi)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc


def regularized_fixed_point(M: np.ndarray, xi: np.ndarray, zeta: float) -> np.ndarray:
    if zeta <= 0:
        raise ConstraintViolation(f"zeta must be positive, got {zeta}")
    return fixed_point(M + zeta * np.eye(M.shape[0]), xi)


def spectral_constants(M: np.ndarray):
    """(mu, iota, lam_max): extreme eigenvalues of the symmetric part and the smallest singular value."""
    sym = 0.5 * (M + M.T)
    eig = np.linalg.eigvalsh(sym)
    iota = float(np.linalg.svd(M, compute_uv=False)[-1])
    return float(eig[0]), iota, float(eig[-1])


def drift_bound(xi: np.ndarray, iota: float, zeta: float) -> float:
    """Upper bound zeta |xi| / (iota (zeta + iota)) on |M^-1 xi - (M + zeta I)^-1 xi|."""
    return zeta * float(np.linalg.norm(xi)) / (iota * (zeta + iota))


# --- constants ----------------------------------------------------------------
def _noise_bracket(bv, bu, g, R) -> float:
    return bv**4 * (1 + g) ** 2 + bu**4 * (1 + g**2) ** 2 + 4 * g**2 * R**2 * bv**2 * bu**2


def _reward_term(bv, bu, R) -> float:
    return 2 * R**2 * (bv**2 + R**2 * bu**2)


def c_constant(bv: float, bu: float, g: float, R: float) -> float:
    return max(4 * bv**4 + 4 * g**2 * R**2 * bu**2 * bv**2, 4 * bu**4) + 2 * g * R * (
        bv**2 * bu**2 + bu**4
    )


def c_check_constant(bv: float, bu: float, g: float, R: float, zeta: float) -> float:
    return zeta**2 + 2 * zeta * math.sqrt(_noise_bracket(bv, bu, g, R)) + c_constant(bv, bu, g, R)


def step_size_ceilings(mu: float, bv: float, bu: float, g: float, R: float, zeta: float | None = None):
    """(c, beta_max, c_check, beta_check_max); the last two are None without zeta.

    ``beta_check_max = zeta / c_check`` takes no spectral input.
    """
    c = c_constant(bv, bu, g, R)
    if zeta is None:
        return c, mu / c, None, None
    cc = c_check_constant(bv, bu, g, R, zeta)
    return c, mu / c, cc, zeta / cc


def sigma_sq(bv, bu, g, R, w_norm_sq) -> float:
    return _reward_term(bv, bu, R) + 2 * _noise_bracket(bv, bu, g, R) * w_norm_sq


def sigma_check_sq(bv, bu, g, R, zeta, w_reg_norm_sq) -> float:
    return _reward_term(bv, bu, R) + 4 * (zeta**2 + _noise_bracket(bv, bu, g, R)) * w_reg_norm_sq


def tau(bv, bu, g, R, h) -> float:
    return math.sqrt(_reward_term(bv, bu, R) + 2 * _noise_bracket(bv, bu, g, R) * h**2)


def tau_check(bv, bu, g, R, zeta, h) -> float:
    return math.sqrt(_reward_term(bv, bu, R) + 4 * (zeta**2 + _noise_bracket(bv, bu, g, R)) * h**2)


def noise_constants(system: CriticSystem):
    """(sigma^2, sigma_check^2, tau, tau_check) for the system's zeta and H."""
    if system.h_radius is None:
        raise MissingProjectionRadius("tau and tau_check need a projection radius H")
    return system.sigma_sq, system.sigma_check_sq, system.tau, system.tau_check


def _attach(base: CriticSystem, zeta: float | None, h_radius: float | None) -> CriticSystem:
    bv, bu, g, R = base.phi_v_max, base.phi_u_max, base.gamma, base.r_max
    fields = dict(zeta=None, w_bar_reg=None, c_check=None, beta_check_max=None,
                  sigma_check_sq=None, h_radius=None, tau=None, tau_check=None)
    if zeta is not None:
        w_reg = regularized_fixed_point(base.m_mat, base.xi, zeta)
        w_reg.setflags(write=False)
        _, _, cc, bcm = step_size_ceilings(base.mu, bv, bu, g, R, zeta)
        fields.update(zeta=float(zeta), w_bar_reg=w_reg, c_check=cc, beta_check_max=bcm,
                      sigma_check_sq=sigma_check_sq(bv, bu, g, R, zeta, float(w_reg @ w_reg)))
    if h_radius is not None:
        floor = float(np.linalg.norm(base.xi)) / base.mu
        if not h_radius > floor:
            raise ConstraintViolation(f"projection radius H = {h_radius} must exceed |xi|/mu = {floor}")
        fields.update(h_radius=float(h_radius), tau=tau(bv, bu, g, R, h_radius))
        if zeta is not None:
            fields["tau_check"] = tau_check(bv, bu, g, R, zeta, h_radius)
    return replace(base, **fields)


def build_critic_system(
    chain: OnPolicyChain,
    features: FeatureSet,
    gamma: float,
    r_max: float,
    zeta: float | None = None,
    h_radius: float | None = None,
) -> CriticSystem:
    M, xi = assemble_system(chain, features, gamma)
    mu, iota, lam_max = spectral_constants(M)
    if mu <= 0:
        raise NotPositive(f"lambda_min of the symmetric part of M is {mu:.3e} <= 0")
    if iota <= 0:
        raise NotPositive("M is singular")
    w_bar = fixed_point(M, xi)
    bv, bu = features.phi_v_max, features.phi_u_max
    c, beta_max, _, _ = step_size_ceilings(mu, bv, bu, gamma, r_max)
    for a in (M, xi, w_bar):
        a.setflags(write=False)
    base = CriticSystem(
        m_mat=M, xi=xi, w_bar=w_bar, mu=mu, iota=iota, lam_max=lam_max,
        c_const=c, beta_max=beta_max,
        sigma_sq=sigma_sq(bv, bu, gamma, r_max, float(w_bar @ w_bar)),
        gamma=float(gamma), r_max=float(r_max), phi_v_max=bv, phi_u_max=bu,
    )
    return _attach(base, zeta, h_radius)


def auto_h_radius(system: CriticSystem, factor: float = 1.1) -> float:
    return factor * float(np.linalg.norm(system.xi)) / system.mu


# --- per-sample matrices ------------------------------------------------------
def sample_matrices(features: FeatureSet, gamma: float, s, r, s_next):
    """Stacks of M_t (n, 2q, 2q) and r_t phi_t (n, 2q) for transitions (s, r, s')."""
    s = np.atleast_1d(s)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    s_next = np.atleast_1d(s_next)
    fv, fvn = features.phi_v[s], features.phi_v[s_next]
    fu, fun = features.phi_u[s], features.phi_u[s_next]
    A = np.einsum("ni,nj->nij", fv, fv) - gamma * np.einsum("ni,nj->nij", fv, fvn)
    B = np.einsum("ni,nj->nij", fu, fu) - gamma**2 * np.einsum("ni,nj->nij", fu, fun)
    C = -2.0 * gamma * r[:, None, None] * np.einsum("ni,nj->nij", fu, fvn)
    n, q = s.shape[0], features.q
    M = np.zeros((n, 2 * q, 2 * q))
    M[:, :q, :q] = A
    M[:, q:, :q] = C
    M[:, q:, q:] = B
    rphi = np.concatenate([r[:, None] * fv, (r * r)[:, None] * fu], axis=1)
    return M, rphi


# --- bound evaluators ---------------------------------------------------------
def _check_step(beta: float, ceiling: float | None, name: str) -> None:
    if ceiling is not None and beta > ceiling * (1 + STEP_TOL):
        raise StepSizeTooLarge(f"step size {beta} exceeds {name} = {ceiling}")


def theorem_bound(
    which: str,
    system: CriticSystem,
    *,
    t: int,
    beta: float,
    k: int | None = None,
    delta: float | None = None,
    init_err: float = 0.0,
    form: str = "stated",
    check_step: bool = True,
) -> float:
    """Right-hand side of one of the critic bounds.

    ``init_err`` is E|z_0|^2 for the mean-square bounds (T1, T2, T3*) and
    E|z_0| for the high-probability bounds (T4, T5), where z_0 is measured
    against w_bar or w_bar_reg as the bound prescribes.  ``t`` counts
    updates in the indexing of the bounds: T1 with ``t`` bounds the iterate
    after ``t + 1`` updates.  For T3, ``form="stated"`` evaluates the
    coarsened statement (mu, iota^-4), ``form="expanded"`` the version
    with 2 mu + zeta and the explicit zeta drift term.
    """
    mu = system.mu
    bv, bu, R = system.phi_v_max, system.phi_u_max, system.r_max
    if which == "T1_last":
        if check_step:
            _check_step(beta, system.beta_max, "beta_max")
        return 2 * math.exp(-beta * mu * t) * init_err + 2 * beta * system.sigma_sq / mu

    if k is None:
        raise ConstraintViolation(f"{which} needs a tail index k")
    n_tail = t - k
    if n_tail <= 0:
        raise ConstraintViolation(f"tail window t - k = {n_tail} must be positive")

    if which == "T2_tail":
        if check_step:
            _check_step(beta, system.beta_max, "beta_max")
        return (10 * math.exp(-k * beta * mu) / (beta**2 * mu**2 * n_tail**2) * init_err
                + 10 * system.sigma_sq / (mu**2 * n_tail))

    if which == "T4_highprob":
        if system.tau is None:
            raise MissingProjectionRadius("T4 needs a projection radius")
        if check_step:
            _check_step(beta, system.beta_max, "beta_max")
        return _high_prob(system.tau, mu, beta, k, n_tail, delta, init_err)

    zeta = system.zeta
    if zeta is None:
        raise ConstraintViolation(f"{which} needs a system built with zeta")
    if check_step:
        _check_step(beta, system.beta_check_max, "beta_check_max")
    a = 2 * mu + zeta
    drift_num = R**2 * (bv**2 + R**2 * bu**2)

    if which == "T3_reg_to_wreg":
        return (10 * math.exp(-k * beta * a) / (beta**2 * a**2 * n_tail**2) * init_err
                + 10 * system.sigma_check_sq / (a**2 * n_tail))
    if which == "T3_reg":
        iota = system.iota
        if form == "stated":
            return (5 * math.exp(-k * beta * mu) / (beta**2 * mu**2 * n_tail**2) * init_err
                    + 5 * system.sigma_check_sq / (mu**2 * n_tail)
                    + 2 * drift_num / (iota**4 * n_tail))
        if form == "expanded":
            return (20 * math.exp(-k * beta * a) / (beta**2 * a**2 * n_tail**2) * init_err
                    + 20 * system.sigma_check_sq / (a**2 * n_tail)
                    + 2 * zeta**2 * drift_num / (iota**2 * (zeta + iota) ** 2))
        raise ConstraintViolation(f"unknown T3 form {form!r}")
    if which == "T5_reg_highprob":
        if system.tau_check is None:
            raise MissingProjectionRadius("T5 needs a projection radius")
        return _high_prob(system.tau_check, a, beta, k, n_tail, delta, init_err, rate=a)
    raise ConstraintViolation(f"unknown bound {which!r}; expected one of {BOUNDS}")


def _high_prob(tau_, scale, beta, k, n_tail, delta, init_err, rate=None) -> float:
    if delta is None or not 0 < delta <= 1:
        raise ConstraintViolation(f"delta must lie in (0, 1], got {delta}")
    rate = scale if rate is None else rate
    root_n = math.sqrt(n_tail)
    return (2 * tau_ / (scale * root_n) * math.sqrt(math.log(1 / delta))
            + 4 * math.exp(-k * beta * rate) / (beta * scale * n_tail) * init_err
            + 4 * tau_ / (scale * root_n))
