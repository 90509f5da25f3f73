"""Linear features and chi-weighted projections onto their column spaces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, RankDeficient
from .mdp import OnPolicyChain

RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class FeatureSet:
    phi_v: np.ndarray  # (S, q)
    phi_u: np.ndarray  # (S, q)
    phi_v_max: float
    phi_u_max: float
    pi_v: np.ndarray
    pi_u: np.ndarray

    @property
    def q(self) -> int:
        return self.phi_v.shape[1]

    @property
    def num_states(self) -> int:
        return self.phi_v.shape[0]


def _check_rank(phi: np.ndarray, name: str) -> None:
    smallest = np.linalg.svd(phi, compute_uv=False)[-1]
    if smallest <= RANK_TOL:
        raise RankDeficient(f"{name} has smallest singular value {smallest:.3e}")


def projection_matrix(phi: np.ndarray, chi: np.ndarray) -> np.ndarray:
    """Pi = Phi (Phi^T D Phi)^-1 Phi^T D with D = diag(chi)."""
    dphi = chi[:, None] * phi
    gram = phi.T @ dphi
    return phi @ np.linalg.solve(gram, dphi.T)


def max_row_norm(phi: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(phi, axis=1)))


def build_feature_set(phi_v, phi_u, chain: OnPolicyChain | None) -> FeatureSet:
    """Validate feature matrices and attach their projections.

    With ``chain=None`` the projections are left as identity matrices, which
    is only meaningful when the features span the whole state space.
    """
    phi_v = np.array(phi_v, dtype=float)
    phi_u = np.array(phi_u, dtype=float)
    if phi_v.ndim != 2 or phi_u.ndim != 2:
        raise DimensionMismatch("feature matrices must be 2-D")
    if phi_v.shape != phi_u.shape:
        raise DimensionMismatch(f"phi_v {phi_v.shape} and phi_u {phi_u.shape} differ")
    n = phi_v.shape[0]
    if chain is not None and chain.num_states != n:
        raise DimensionMismatch(f"features have {n} rows, chain has {chain.num_states} states")
    _check_rank(phi_v, "phi_v")
    _check_rank(phi_u, "phi_u")
    if chain is None:
        if phi_v.shape[1] != n:
            raise DimensionMismatch("projections need a chain unless features are square")
        pi_v = pi_u = np.eye(n)
    else:
        pi_v = projection_matrix(phi_v, chain.chi)
        pi_u = projection_matrix(phi_u, chain.chi)
    for a in (phi_v, phi_u, pi_v, pi_u):
        a.setflags(write=False)
    return FeatureSet(phi_v, phi_u, max_row_norm(phi_v), max_row_norm(phi_u), pi_v, pi_u)


def identity_features(num_states: int, scale: float = 1.0) -> FeatureSet:
    """Tabular features ``scale * I``; the projections are the identity."""
    if num_states < 1:
        raise DimensionMismatch("num_states must be positive")
    eye = scale * np.eye(num_states)
    return build_feature_set(eye, eye.copy(), None)


def random_features(
    num_states: int, q: int, chain: OnPolicyChain, rng: np.random.Generator, scale: float = 1.0
) -> FeatureSet:
    """Gaussian features with orthonormalized columns (independently for v and u)."""
    if not 1 <= q <= num_states:
        raise DimensionMismatch(f"q must lie in [1, {num_states}], got {q}")
    mats = []
    for _ in range(2):
        g = rng.standard_normal((num_states, q))
        qmat, _ = np.linalg.qr(g)
        mats.append(scale * qmat)
    return build_feature_set(mats[0], mats[1], chain)


def weighted_norm(y: np.ndarray, chi: np.ndarray) -> float:
    return float(np.sqrt(np.sum(chi * y * y)))
