"""Mean-variance TD critic: plain, tail-averaged, regularized and projected variants."""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConstraintViolation, CriticDiverged, StepSizeTooLarge
from .features import FeatureSet
from .kernels import td_kernel
from .mdp import Mdp, OnPolicyChain, TabularPolicy, Transition, TransitionSampler, induced_chain
from .system import STEP_TOL, CriticSystem, build_critic_system, sample_matrices

CHUNK = 1 << 16
DIVERGENCE_FACTOR = 1e6


class EmptyTailWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class CriticState:
    w: np.ndarray  # (v, u) stacked
    step: int
    beta: float
    zeta: float | None = None
    h_radius: float | None = None
    tail_k: int = 0
    tail_sum: np.ndarray | None = None
    tail_count: int = 0

    @property
    def q(self) -> int:
        return self.w.shape[0] // 2

    @property
    def v(self) -> np.ndarray:
        return self.w[: self.q]

    @property
    def u(self) -> np.ndarray:
        return self.w[self.q:]

    @property
    def tail_average(self) -> np.ndarray | None:
        if self.tail_count == 0:
            return None
        return self.tail_sum / self.tail_count


def initial_state(q: int, beta: float, *, zeta=None, h_radius=None, tail_k=0, w0=None) -> CriticState:
    w = np.zeros(2 * q) if w0 is None else np.array(w0, dtype=float)
    if w.shape != (2 * q,):
        raise ConstraintViolation(f"w0 must have length {2 * q}")
    return CriticState(w, 0, float(beta), zeta, h_radius, int(tail_k), np.zeros(2 * q), 0)


def project(w: np.ndarray, h_radius: float) -> np.ndarray:
    """Euclidean projection onto the ball of radius ``h_radius``."""
    if h_radius <= 0:
        raise ConstraintViolation(f"projection radius must be positive, got {h_radius}")
    nrm = float(np.linalg.norm(w))
    if nrm <= h_radius:
        return w
    return w * (h_radius / nrm)


def td_errors(w: np.ndarray, tr: Transition, features: FeatureSet, gamma: float):
    """(delta, epsilon) of the value and square-value TD updates."""
    q = features.q
    v, u = w[:q], w[q:]
    s, _, r, s1 = tr
    v_s, v_s1 = v @ features.phi_v[s], v @ features.phi_v[s1]
    u_s, u_s1 = u @ features.phi_u[s], u @ features.phi_u[s1]
    delta = r + gamma * v_s1 - v_s
    eps = r * r + 2 * gamma * r * v_s1 + gamma**2 * u_s1 - u_s
    return delta, eps


def _advance(state: CriticState, w_new: np.ndarray) -> CriticState:
    if state.h_radius is not None:
        w_new = project(w_new, state.h_radius)
    step = state.step + 1
    tail_sum, tail_count = state.tail_sum, state.tail_count
    if step > state.tail_k:
        tail_sum = tail_sum + w_new
        tail_count += 1
    return replace(state, w=w_new, step=step, tail_sum=tail_sum, tail_count=tail_count)


def _td_update(state: CriticState, tr: Transition, features: FeatureSet, gamma: float, zeta: float):
    delta, eps = td_errors(state.w, tr, features, gamma)
    s = tr[0]
    shrink = 1.0 - state.beta * zeta
    q = features.q
    w_new = np.empty_like(state.w)
    w_new[:q] = shrink * state.w[:q] + state.beta * delta * features.phi_v[s]
    w_new[q:] = shrink * state.w[q:] + state.beta * eps * features.phi_u[s]
    return _advance(state, w_new)


def td_step(state: CriticState, tr: Transition, features: FeatureSet, gamma: float) -> CriticState:
    if state.zeta is not None:
        raise ConstraintViolation("td_step is the unregularized update; use td_step_regularized")
    return _td_update(state, tr, features, gamma, 0.0)


def td_step_regularized(state: CriticState, tr: Transition, features: FeatureSet, gamma: float) -> CriticState:
    """Shrink by (1 - beta zeta), then add the TD increment."""
    if state.zeta is None or state.zeta < 0:
        raise ConstraintViolation("td_step_regularized needs zeta >= 0")
    return _td_update(state, tr, features, gamma, state.zeta)


def td_step_matrix(state: CriticState, tr: Transition, features: FeatureSet, gamma: float) -> CriticState:
    """Same update written as w + beta (r phi - (zeta I + M_t) w)."""
    M, rphi = sample_matrices(features, gamma, tr[0], tr[2], tr[3])
    zeta = state.zeta or 0.0
    w_new = state.w + state.beta * (rphi[0] - M[0] @ state.w - zeta * state.w)
    return _advance(state, w_new)


def tail_average(iterates, k: int) -> np.ndarray:
    """Mean of iterates w_{k+1}, ..., w_t given the list w_1, ..., w_t."""
    arr = np.asarray(iterates, dtype=float)
    if k >= len(arr):
        raise ConstraintViolation("empty tail window")
    return arr[k:].mean(axis=0)


# --- full runs ----------------------------------------------------------------
@dataclass(frozen=True)
class CriticConfig:
    t: int
    beta: float
    k: int | None = None  # default t // 2
    zeta: float | None = None
    h_radius: float | None = None
    seed: int | tuple = 0
    checkpoints: tuple[int, ...] = ()
    checkpoint_tail_fraction: float = 0.5
    w0: tuple[float, ...] | None = None
    override_step_size: bool = False

    @property
    def tail_k(self) -> int:
        return self.t // 2 if self.k is None else self.k

    @property
    def variant(self) -> str:
        name = "plain" if self.zeta is None else "regularized"
        return name + ("_projected" if self.h_radius is not None else "")

    def validate(self) -> None:
        if self.t < 1:
            raise ConstraintViolation(f"t must be positive, got {self.t}")
        if not 0 <= self.tail_k <= self.t:
            raise ConstraintViolation(f"k must lie in [0, t], got k={self.tail_k}, t={self.t}")
        if self.beta <= 0:
            raise ConstraintViolation(f"beta must be positive, got {self.beta}")
        if self.zeta is not None and self.zeta < 0:
            raise ConstraintViolation("zeta must be nonnegative")
        if self.h_radius is not None and self.h_radius <= 0:
            raise ConstraintViolation("H must be positive")
        if any(c < 1 or c > self.t for c in self.checkpoints):
            raise ConstraintViolation("checkpoints must lie in [1, t]")
        if not 0 <= self.checkpoint_tail_fraction < 1:
            raise ConstraintViolation("checkpoint_tail_fraction must lie in [0, 1)")


def geometric_checkpoints(t: int, start: int = 1) -> tuple[int, ...]:
    """Powers of two from ``start`` up to ``t`` (``t`` itself always included)."""
    out, c = [], start
    while c < t:
        out.append(c)
        c *= 2
    out.append(t)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class RunResult:
    w_final: CriticState
    w_tail: np.ndarray
    tail_empty: bool
    checkpoints: np.ndarray  # checkpoint steps
    w_at: np.ndarray  # iterate at each checkpoint
    tail_at: np.ndarray  # tail average at each checkpoint (k_c = fraction * c)
    projected_at: np.ndarray  # cumulative projection count at each checkpoint
    projected_steps: int
    seed: int | tuple
    error_trace: np.ndarray | None = None  # columns: t, err_last, err_tail

    @property
    def projected_flags(self) -> np.ndarray:
        """Whether any projection happened within each checkpoint interval."""
        return np.diff(np.concatenate([[0], self.projected_at])) > 0


def check_step_size(config: CriticConfig, system: CriticSystem) -> None:
    if config.override_step_size:
        return
    if config.zeta is None:
        ceiling, name = system.beta_max, "beta_max"
    else:
        sys_z = system if system.zeta == config.zeta else system.with_zeta(config.zeta)
        ceiling, name = sys_z.beta_check_max, "beta_check_max"
    if config.beta > ceiling * (1 + STEP_TOL):
        raise StepSizeTooLarge(
            f"beta = {config.beta} exceeds {name} = {ceiling}; pass override_step_size to run anyway"
        )


def _rng_for(seed) -> np.random.Generator:
    return np.random.default_rng(list(seed) if isinstance(seed, tuple) else seed)


def run_critic(
    mdp: Mdp,
    policy: TabularPolicy,
    features: FeatureSet,
    config: CriticConfig,
    *,
    chain: OnPolicyChain | None = None,
    system: CriticSystem | None = None,
    reference: np.ndarray | None = None,
    divergence_limit: float | None = None,
) -> RunResult:
    """Run the critic for ``config.t`` i.i.d. updates.

    The tail average covers w_{k+1}..w_t.  With ``reference`` an error trace
    ``|w_c - reference|`` and ``|tail_c - reference|`` is attached, where
    tail_c averages w_{k_c+1}..w_c with k_c = floor(fraction * c).
    """
    config.validate()
    chain = induced_chain(mdp, policy) if chain is None else chain
    if system is None and not config.override_step_size:
        system = build_critic_system(chain, features, mdp.gamma, mdp.r_max)
    if system is not None:
        check_step_size(config, system)

    q = features.q
    t, k = config.t, config.tail_k
    cps = np.array(sorted(set(config.checkpoints)), dtype=np.int64)
    ks = np.floor(config.checkpoint_tail_fraction * cps).astype(np.int64)
    rec = np.unique(np.concatenate([cps, ks, [k, t]])).astype(np.int64)
    rec_pos = rec[rec > 0]

    w = np.zeros(2 * q) if config.w0 is None else np.array(config.w0, dtype=float)
    if w.shape != (2 * q,):
        raise ConstraintViolation(f"w0 must have length {2 * q}")
    w0 = w.copy()
    acc = np.zeros(2 * q)
    out_w = np.zeros((len(rec_pos), 2 * q))
    out_acc = np.zeros((len(rec_pos), 2 * q))
    out_proj = np.zeros(len(rec_pos), dtype=np.int64)

    sampler = TransitionSampler(mdp, policy, chain)
    rng = _rng_for(config.seed)
    zeta = 0.0 if config.zeta is None else float(config.zeta)
    h = -1.0 if config.h_radius is None else float(config.h_radius)
    if divergence_limit is None:
        scale = max(1.0, float(np.linalg.norm(system.w_bar)) if system is not None else 1.0)
        divergence_limit = DIVERGENCE_FACTOR * (config.h_radius or scale)

    proj, done = 0, 0
    while done < t:
        n = min(CHUNK, t - done)
        u = rng.random((n, 3))
        proj = td_kernel(
            w, acc, done, u, sampler.chi_cdf, sampler.pi_cdf, sampler.p_cdf, mdp.rewards,
            features.phi_v, features.phi_u, mdp.gamma, config.beta, zeta, h,
            rec_pos, out_w, out_acc, out_proj, proj,
        )
        done += n
        nrm = float(np.linalg.norm(w))
        if not math.isfinite(nrm) or nrm > divergence_limit:
            raise CriticDiverged(f"critic iterate norm {nrm:.3e} exceeded {divergence_limit:.3e} by step {done}")

    # lookup tables indexed by recorded step (step 0 = initial state)
    def at(steps):
        idx = np.searchsorted(rec_pos, steps)
        ws = np.where((steps == 0)[:, None], w0, out_w[np.minimum(idx, len(rec_pos) - 1)])
        accs = np.where((steps == 0)[:, None], 0.0, out_acc[np.minimum(idx, len(rec_pos) - 1)])
        prj = np.where(steps == 0, 0, out_proj[np.minimum(idx, len(rec_pos) - 1)])
        return ws, accs, prj

    w_t, acc_t, _ = at(np.array([t]))
    _, acc_k, _ = at(np.array([k]))
    tail_empty = t == k
    if tail_empty:
        warnings.warn("tail window is empty (t == k); reporting the last iterate", EmptyTailWarning)
        w_tail = w_t[0].copy()
    else:
        w_tail = (acc_t[0] - acc_k[0]) / (t - k)

    if len(cps):
        w_cp, acc_cp, proj_cp = at(cps)
        _, acc_kc, _ = at(ks)
        counts = (cps - ks).astype(float)
        tail_cp = (acc_cp - acc_kc) / counts[:, None]
    else:
        w_cp = tail_cp = np.zeros((0, 2 * q))
        proj_cp = np.zeros(0, dtype=np.int64)

    final = CriticState(
        w=w_t[0].copy(), step=t, beta=config.beta, zeta=config.zeta, h_radius=config.h_radius,
        tail_k=k, tail_sum=acc_t[0] - acc_k[0], tail_count=t - k,
    )
    trace = None
    if reference is not None and len(cps):
        ref = np.asarray(reference, dtype=float)
        trace = np.column_stack([
            cps, np.linalg.norm(w_cp - ref, axis=1), np.linalg.norm(tail_cp - ref, axis=1)
        ])
    return RunResult(final, w_tail, tail_empty, cps, w_cp, tail_cp, proj_cp, int(proj), config.seed, trace)


# --- Monte-Carlo statistics -----------------------------------------------------
def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("MVTD_THREADS", "1")))
    except ValueError:
        return 1


def replication_seeds(base_seed: int, replications: int) -> list[tuple[int, int]]:
    return [(int(base_seed), i) for i in range(replications)]


def order_statistic_quantile(values: np.ndarray, level: float) -> np.ndarray:
    """Empirical ``level`` quantile along axis 0: the ceil(level R)-th smallest value."""
    values = np.sort(np.asarray(values, dtype=float), axis=0)
    r = values.shape[0]
    idx = min(max(math.ceil(level * r - 1e-12) - 1, 0), r - 1)
    return values[idx]


@dataclass(frozen=True, eq=False)
class Statistics:
    checkpoints: np.ndarray
    mse_last: np.ndarray
    se_last: np.ndarray
    mse_tail: np.ndarray
    se_tail: np.ndarray
    quantile_tail: np.ndarray | None
    quantile_last: np.ndarray | None
    projected_fraction: np.ndarray
    replications: int
    final_tail_sq_err: np.ndarray = field(repr=False, default=None)
    results: list = field(repr=False, default=None)


def estimate_statistics(
    mdp: Mdp,
    policy: TabularPolicy,
    features: FeatureSet,
    config: CriticConfig,
    replications: int,
    reference: np.ndarray,
    *,
    delta: float | None = None,
    seeds: list | None = None,
    chain: OnPolicyChain | None = None,
    system: CriticSystem | None = None,
    threads: int | None = None,
    keep_results: bool = False,
) -> Statistics:
    """MSE (with standard errors) and (1 - delta) quantiles of the error norms per checkpoint."""
    if replications < 2:
        raise ConstraintViolation("need at least 2 replications")
    base = config.seed if isinstance(config.seed, int) else 0
    seeds = replication_seeds(base, replications) if seeds is None else [
        tuple(s) if isinstance(s, (list, tuple)) else s for s in seeds
    ]
    if len(seeds) != replications:
        raise ConstraintViolation("one seed per replication is required")
    if len(set(seeds)) != len(seeds):
        raise ConstraintViolation("duplicate replication seeds would give identical, not independent, runs")
    chain = induced_chain(mdp, policy) if chain is None else chain
    if system is None and not config.override_step_size:
        system = build_critic_system(chain, features, mdp.gamma, mdp.r_max)
    if system is not None:
        check_step_size(config, system)
    ref = np.asarray(reference, dtype=float)

    def one(seed):
        return run_critic(mdp, policy, features, replace(config, seed=seed, override_step_size=True),
                          chain=chain, system=system, reference=ref)

    threads = default_threads() if threads is None else threads
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]

    err_last = np.stack([r.error_trace[:, 1] for r in results]) if results[0].error_trace is not None else None
    err_tail = np.stack([r.error_trace[:, 2] for r in results]) if err_last is not None else None
    cps = results[0].checkpoints
    if err_last is None:
        err_last = err_tail = np.zeros((replications, 0))
    sq_last, sq_tail = err_last**2, err_tail**2
    root_r = math.sqrt(replications)
    level = None if delta is None else 1.0 - delta
    if level is not None and not 0 <= level < 1:
        raise ConstraintViolation(f"delta must lie in (0, 1], got {delta}")
    projected = np.stack([r.projected_flags for r in results]) if len(cps) else np.zeros((replications, 0))
    final_tail = np.array([float(np.sum((r.w_tail - ref) ** 2)) for r in results])
    return Statistics(
        checkpoints=cps,
        mse_last=sq_last.mean(axis=0),
        se_last=sq_last.std(axis=0, ddof=1) / root_r,
        mse_tail=sq_tail.mean(axis=0),
        se_tail=sq_tail.std(axis=0, ddof=1) / root_r,
        quantile_tail=None if level is None else order_statistic_quantile(err_tail, level),
        quantile_last=None if level is None else order_statistic_quantile(err_last, level),
        projected_fraction=projected.mean(axis=0),
        replications=replications,
        final_tail_sq_err=final_tail,
        results=results if keep_results else None,
    )
