"""Verification suites: each checks one acceptance property and emits CSV tables."""

from __future__ import annotations

import json
import math
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from .. import gradients as G
from .. import instances
from ..actor import ActorConfig, averaged_spsa, run_mv_spsa_ac
from ..errors import NotIrreducible, NotPositive, ParseError
from ..critic import CriticConfig, default_threads, estimate_statistics, geometric_checkpoints
from ..features import identity_features, random_features
from ..mdp import TabularPolicy, TransitionSampler, exact_square_value, exact_value, garnet_mdp, induced_chain, uniform_policy, validate_mdp
from ..system import build_critic_system, drift_bound, sample_matrices, theorem_bound
from .output import sha256, write_csv, write_manifest

# tolerances of the acceptance criteria
FIXED_POINT_TOL = 1e-9
ONE_STATE_W_BAR = (2.0, 4.0)
ONE_STATE_MU = 0.10961179679779243
ONE_STATE_C = 7.0
SLOPE_RANGE = (-1.3, -0.7)
RATE_EXPONENTS = (12, 13, 14, 15, 16)
DRIFT_ZETAS = (0.1, 0.01, 0.001)
HIGH_PROB_T, HIGH_PROB_K, HIGH_PROB_DELTA = 2**14, 2**13, 0.1
CONTRACTION_SAMPLES = 10**5
CONTRACTION_SE = 3.0
GRAD_FD_H, GRAD_FD_RTOL, GRAD_THETAS = 1e-5, 1e-4, 50
SMOOTHNESS_PAIRS = 1000
SPSA_PS = (0.2, 0.1, 0.05)
SPSA_RATIO_RANGE = (1.6, 2.4)
ACTOR_NS = (256, 1024, 4096)
ACTOR_LAMS = (0.0, 0.5, 2.0)
ACTOR_DECAY_LAM = 0.5
ACTOR_SWEEP_N = 1024
ACTOR_SLOPE_MAX = -0.15


@dataclass
class SuiteResult:
    name: str
    passed: bool
    summary: str
    tables: dict = field(default_factory=dict)  # file name -> (columns, rows)
    metrics: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    seconds: float = 0.0


def log_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def _critic_chain():
    m = instances.five_state_chain()
    pol = uniform_policy(m)
    chain = induced_chain(m, pol)
    feats = identity_features(m.num_states)
    return m, pol, chain, feats, build_critic_system(chain, feats, m.gamma, m.r_max)


# --- criterion 1 ---------------------------------------------------------------
def suite_fixed_point(seed: int, replications: int | None) -> SuiteResult:
    rows, ok = [], True
    t0 = time.perf_counter()
    for name, (m, pol) in instances.critic_instances().items():
        if name == "stochastic_pair":
            continue
        chain = induced_chain(m, pol)
        feats = identity_features(m.num_states)
        sys_ = build_critic_system(chain, feats, m.gamma, m.r_max)
        V = exact_value(chain, m.gamma)
        U = exact_square_value(chain, m.gamma, V)
        n = m.num_states
        ev = float(np.max(np.abs(sys_.w_bar[:n] - V)))
        eu = float(np.max(np.abs(sys_.w_bar[n:] - U)))
        passed = ev <= FIXED_POINT_TOL and eu <= FIXED_POINT_TOL
        if name == "one_state":
            passed &= bool(np.allclose(sys_.w_bar, ONE_STATE_W_BAR, rtol=0, atol=FIXED_POINT_TOL))
            passed &= abs(sys_.mu - ONE_STATE_MU) <= 1e-9 and abs(sys_.c_const - ONE_STATE_C) <= 1e-12
        ok &= passed
        rows.append(dict(instance=name, err_v=ev, err_u=eu, mu=sys_.mu, c=sys_.c_const,
                         beta_max=sys_.beta_max, w_bar=" ".join(repr(float(x)) for x in sys_.w_bar),
                         passed=passed))
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 1.0
    worst = max(max(r["err_v"], r["err_u"]) for r in rows)
    return SuiteResult("fixed_point", ok, f"max fixed-point error {worst:.2e} (tol 1e-9), {elapsed:.2f}s",
                       {"fixed_point.csv": (list(rows[0]), rows)}, {"max_err": worst, "seconds": elapsed})


# --- criterion 2 ---------------------------------------------------------------
def suite_bound_validity(seed: int, replications: int | None) -> SuiteResult:
    reps = replications or 200
    m, pol, chain, feats, sys_ = _critic_chain()
    t = 2**16
    cfg = CriticConfig(t=t, beta=sys_.beta_max, seed=seed, checkpoints=geometric_checkpoints(t))
    st = estimate_statistics(m, pol, feats, cfg, reps, sys_.w_bar, chain=chain, system=sys_)
    z0 = float(sys_.w_bar @ sys_.w_bar)
    rows, violations = [], 0
    for i, c in enumerate(st.checkpoints):
        b1 = theorem_bound("T1_last", sys_, t=int(c) - 1, beta=cfg.beta, init_err=z0)
        b2 = theorem_bound("T2_tail", sys_, t=int(c), k=int(c) // 2, beta=cfg.beta, init_err=z0)
        v1, v2 = st.mse_last[i] > b1, st.mse_tail[i] > b2
        violations += int(v1) + int(v2)
        rows.append(dict(t=int(c), mse_last=st.mse_last[i], se_last=st.se_last[i], bound_T1=b1,
                         mse_tail=st.mse_tail[i], se_tail=st.se_tail[i], bound_T2=b2,
                         violation_T1=v1, violation_T2=v2))
    tightest = max(max(r["mse_last"] / r["bound_T1"], r["mse_tail"] / r["bound_T2"]) for r in rows)
    return SuiteResult("bound_validity", violations == 0,
                       f"{violations} violations over {len(rows)} checkpoints x 2 bounds; max MSE/bound {tightest:.3g}",
                       {"bounds.csv": (list(rows[0]), rows)}, {"violations": violations, "max_ratio": tightest})


# --- criterion 3 ---------------------------------------------------------------
def suite_tail_rate(seed: int, replications: int | None) -> SuiteResult:
    reps = replications or 100
    m, pol, chain, feats, sys_ = _critic_chain()
    ts = [2**e for e in RATE_EXPONENTS]
    cfg = CriticConfig(t=ts[-1], beta=sys_.beta_max, seed=seed, checkpoints=tuple(ts))
    st = estimate_statistics(m, pol, feats, cfg, reps, sys_.w_bar, chain=chain, system=sys_)
    slope = log_slope(st.checkpoints, st.mse_tail)
    rows = [dict(t=int(c), k=int(c) // 2, mse_tail=st.mse_tail[i], se_tail=st.se_tail[i])
            for i, c in enumerate(st.checkpoints)]
    ok = SLOPE_RANGE[0] <= slope <= SLOPE_RANGE[1]
    return SuiteResult("tail_rate", ok, f"tail-MSE log-log slope {slope:.3f} (need [-1.3, -0.7])",
                       {"tail_rate.csv": (list(rows[0]), rows)}, {"slope": slope})


# --- criterion 4 ---------------------------------------------------------------
def random_systems(seed: int, count: int = 5, num_states: int = 6, q: int = 3):
    """Garnet MDPs under random policies with random orthonormal features."""
    rng = np.random.default_rng([seed, 4])
    out = []
    while len(out) < count:
        try:
            m = garnet_mdp(num_states, 2, 3, rng, gamma=float(rng.uniform(0.3, 0.9)))
            pol = TabularPolicy(rng.dirichlet(np.ones(2), size=num_states))
            chain = induced_chain(m, pol)
            feats = random_features(num_states, q, chain, rng)
            out.append(build_critic_system(chain, feats, m.gamma, m.r_max))
        except (NotIrreducible, NotPositive):  # outside the regime the bounds cover
            continue
    return out


def suite_regularized(seed: int, replications: int | None) -> SuiteResult:
    reps = replications or 100
    m, pol, chain, feats, sys_ = _critic_chain()
    rows = []
    for e in RATE_EXPONENTS:
        t = 2**e
        k = t // 2
        zeta = 1.0 / math.sqrt(t - k)
        sz = sys_.with_zeta(zeta)
        beta = zeta / sz.c_check
        cfg = CriticConfig(t=t, k=k, beta=beta, zeta=zeta)
        seeds = [(seed, t, i) for i in range(reps)]
        st = estimate_statistics(m, pol, feats, cfg, reps, sys_.w_bar, seeds=seeds, chain=chain, system=sz)
        mse = float(st.final_tail_sq_err.mean())
        se = float(st.final_tail_sq_err.std(ddof=1) / math.sqrt(reps))
        rows.append(dict(t=t, k=k, zeta=zeta, beta=beta, mse_to_w_bar=mse, se=se))
    slope = log_slope([r["t"] for r in rows], [r["mse_to_w_bar"] for r in rows])
    slope_ok = SLOPE_RANGE[0] <= slope <= SLOPE_RANGE[1]

    drift_rows = []
    for i, s in enumerate(random_systems(seed)):
        for zeta in DRIFT_ZETAS:
            sz = s.with_zeta(zeta)
            lhs = float(np.linalg.norm(sz.w_bar_reg - s.w_bar))
            rhs = drift_bound(s.xi, s.iota, zeta)
            drift_rows.append(dict(system=i, zeta=zeta, drift=lhs, bound=rhs, holds=lhs <= rhs))
    drift_ok = all(r["holds"] for r in drift_rows)
    return SuiteResult(
        "regularized", slope_ok and drift_ok,
        f"regularized MSE slope {slope:.3f} (need [-1.3, -0.7]); drift bound holds {sum(r['holds'] for r in drift_rows)}/{len(drift_rows)}",
        {"regularized_rate.csv": (list(rows[0]), rows), "drift.csv": (list(drift_rows[0]), drift_rows)},
        {"slope": slope, "drift_ok": drift_ok},
    )


# --- criterion 5 ---------------------------------------------------------------
def suite_high_probability(seed: int, replications: int | None) -> SuiteResult:
    reps = replications or 500
    m, pol, chain, feats, sys_ = _critic_chain()
    t, k, delta = HIGH_PROB_T, HIGH_PROB_K, HIGH_PROB_DELTA
    h = 1.1 * float(np.linalg.norm(sys_.xi)) / sys_.mu
    rows = []
    zeta = 1.0 / math.sqrt(t - k)
    for variant, which in (("projected", "T4_highprob"), ("regularized_projected", "T5_reg_highprob")):
        if variant == "projected":
            sz = sys_.with_h_radius(h)
            beta, ref, z = sz.beta_max, sz.w_bar, None
        else:
            sz = sys_.with_zeta(zeta).with_h_radius(h)
            beta, ref, z = zeta / sz.c_check, sz.w_bar_reg, zeta
        cfg = CriticConfig(t=t, k=k, beta=beta, zeta=z, h_radius=h, seed=seed)
        seeds = [(seed, 5 + (z is not None), i) for i in range(reps)]
        st = estimate_statistics(m, pol, feats, cfg, reps, ref, seeds=seeds, chain=chain, system=sz)
        errs = np.sqrt(st.final_tail_sq_err)
        q = float(np.sort(errs)[math.ceil((1 - delta) * reps) - 1])
        bound = theorem_bound(which, sz, t=t, k=k, beta=beta, delta=delta, init_err=float(np.linalg.norm(ref)))
        rows.append(dict(variant=variant, t=t, k=k, beta=beta, zeta=z if z is not None else math.nan, h_radius=h,
                         quantile_90=q, bound=bound, holds=q <= bound))
    ok = all(r["holds"] for r in rows)
    return SuiteResult("high_probability", ok,
                       "; ".join(f"{r['variant']}: q90 {r['quantile_90']:.3g} vs bound {r['bound']:.3g}" for r in rows),
                       {"high_probability.csv": (list(rows[0]), rows)}, {"rows": rows})


# --- criterion 6 ---------------------------------------------------------------
def contraction_check(mdp, policy, features, beta, n, rng):
    """(lambda_max of mean (I - beta M_t)^T (I - beta M_t), 1 - beta mu, standard error)."""
    chain = induced_chain(mdp, policy)
    sys_ = build_critic_system(chain, features, mdp.gamma, mdp.r_max)
    s, _, r, sn = TransitionSampler(mdp, policy, chain).draw(rng, n)
    M, _ = sample_matrices(features, mdp.gamma, s, r, sn)
    A = np.eye(M.shape[1])[None] - beta * M
    mean = np.einsum("nji,njk->ik", A, A) / n
    evals, evecs = np.linalg.eigh(0.5 * (mean + mean.T))
    v = evecs[:, -1]
    quad = np.sum((A @ v) ** 2, axis=1)
    se = float(quad.std(ddof=1) / math.sqrt(n))
    return float(evals[-1]), 1.0 - beta * sys_.mu, se


def suite_contraction(seed: int, replications: int | None) -> SuiteResult:
    n = replications or CONTRACTION_SAMPLES
    rows = []
    for i, (name, (m, pol)) in enumerate(instances.critic_instances().items()):
        feats = identity_features(m.num_states)
        beta = build_critic_system(induced_chain(m, pol), feats, m.gamma, m.r_max).beta_max
        lam, target, se = contraction_check(m, pol, feats, beta, n, np.random.default_rng([seed, i]))
        rows.append(dict(instance=name, beta=beta, lambda_max=lam, one_minus_beta_mu=target, se=se,
                         holds=lam <= target + CONTRACTION_SE * se))
    ok = all(r["holds"] for r in rows)
    margin = max(r["lambda_max"] - r["one_minus_beta_mu"] for r in rows)
    return SuiteResult("contraction", ok, f"max lambda_max - (1 - beta mu) = {margin:.3g} over {len(rows)} instances",
                       {"contraction.csv": (list(rows[0]), rows)}, {"margin": margin})


# --- criteria 7 and 8 ----------------------------------------------------------
def gradient_instances(seed: int, count: int = 3):
    """The actor reference MDP plus random 2-state 2-action MDPs with R_max = 1."""
    m, template, _, _ = instances.actor_reference()
    out = [("actor_reference", m, template.action_features)]
    rng = np.random.default_rng([seed, 7])
    for i in range(count):
        P = rng.dirichlet(np.ones(2), size=(2, 2))
        R = rng.uniform(-1, 1, size=(2, 2))
        R[0, 0] = 1.0  # pin R_max
        mi = validate_mdp(P, R, float(rng.uniform(0.2, 0.8)), r_max=1.0)
        out.append((f"random_{i}", mi, float(rng.uniform(0.5, 2.0)) * G.tabular_action_features(2, 2)))
    return out


def _rel_err(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


LOGIT_RANGE = 3.0


def random_theta(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """theta with every logit x(s, a) . theta inside [-3, 3].

    Further out the policy saturates, the gradients fall to ~1e-9 and central
    differences at h = 1e-5 are dominated by round-off.
    """
    X = float(np.max(np.linalg.norm(x, axis=2)))
    return rng.uniform(-LOGIT_RANGE, LOGIT_RANGE, size=x.shape[-1]) / X


def suite_gradient_oracles(seed: int, replications: int | None) -> SuiteResult:
    count = replications or GRAD_THETAS
    rng = np.random.default_rng([seed, 70])
    rows = []
    for name, m, x in gradient_instances(seed):
        for lam in ACTOR_LAMS:
            C = G.instance_constants(m, x, lam)
            for _ in range(count):
                pol = G.SoftmaxPolicy(random_theta(x, rng), x)
                th = pol.theta
                b = G.gradient_bundle(m, pol, 0, lam)
                fd_j = G.finite_difference(lambda t: G.exact_j(m, pol.with_theta(t), 0), th, GRAD_FD_H)
                fd_u = G.finite_difference(lambda t: G.exact_u(m, pol.with_theta(t), 0), th, GRAD_FD_H)
                ej, eu = _rel_err(b.grad_j, fd_j), _rel_err(b.grad_u, fd_u)
                nj, nl = float(np.linalg.norm(b.grad_j)), float(np.linalg.norm(b.grad_l))
                rows.append(dict(instance=name, lam=lam, theta=" ".join(repr(float(v)) for v in th),
                                 rel_err_j=ej, rel_err_u=eu, grad_j_norm=nj, grad_j_bound=C.grad_j_bound,
                                 grad_l_norm=nl, k1=C.k1,
                                 ok=ej <= GRAD_FD_RTOL and eu <= GRAD_FD_RTOL and nj <= C.grad_j_bound and nl <= C.k1))
    ok = all(r["ok"] for r in rows)
    worst = max(max(r["rel_err_j"], r["rel_err_u"]) for r in rows)
    return SuiteResult("gradient_oracles", ok,
                       f"max FD relative error {worst:.2e} (tol 1e-4); {sum(not r['ok'] for r in rows)} failures of {len(rows)}",
                       {"gradient_oracles.csv": (list(rows[0]), rows)}, {"max_rel_err": worst})


def suite_smoothness(seed: int, replications: int | None) -> SuiteResult:
    pairs = replications or SMOOTHNESS_PAIRS
    rng = np.random.default_rng([seed, 80])
    rows = []
    insts = gradient_instances(seed)
    for i in range(pairs):
        name, m, x = insts[i % len(insts)]
        lam = ACTOR_LAMS[i % len(ACTOR_LAMS)]
        C = G.instance_constants(m, x, lam)
        pol = G.SoftmaxPolicy(np.zeros(x.shape[-1]), x)
        th1 = rng.normal(0.0, 2.0, size=x.shape[-1])
        th2 = th1 + rng.normal(0.0, 10.0 ** rng.uniform(-3, 0.5), size=x.shape[-1])
        g1 = G.gradient_bundle(m, pol.with_theta(th1), 0, lam).grad_l
        g2 = G.gradient_bundle(m, pol.with_theta(th2), 0, lam).grad_l
        ratio = float(np.linalg.norm(g1 - g2) / np.linalg.norm(th1 - th2))
        rows.append(dict(pair=i, instance=name, lam=lam, lipschitz_ratio=ratio, l_o=C.l_o, holds=ratio <= C.l_o))
    ok = all(r["holds"] for r in rows)
    tight = max(r["lipschitz_ratio"] / r["l_o"] for r in rows)
    return SuiteResult("smoothness", ok, f"{sum(not r['holds'] for r in rows)} violations in {pairs} pairs; max ratio/L_o {tight:.3g}",
                       {"smoothness.csv": (list(rows[0]), rows)}, {"max_fraction": tight})


# --- criterion 9 ---------------------------------------------------------------
SPSA_THETA = (0.4, -0.3)


def spsa_bias_errors(mdp, template, theta, ps):
    """|Delta-averaged one-sided SPSA estimate with exact J - grad J| for each p."""
    f = lambda t: G.exact_j(mdp, template.with_theta(t), 0)
    g = G.exact_grad_j(mdp, template.with_theta(np.asarray(theta, float)), 0)
    return [float(np.linalg.norm(averaged_spsa(f, theta, p) - g)) for p in ps]


def suite_spsa_bias(seed: int, replications: int | None) -> SuiteResult:
    m, template, _, _ = instances.actor_reference()
    errs = spsa_bias_errors(m, template, np.array(SPSA_THETA), SPSA_PS)
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    order = log_slope(SPSA_PS, errs)
    rows = [dict(p=p, error=e, ratio_to_next=ratios[i] if i < len(ratios) else math.nan) for i, (p, e) in enumerate(zip(SPSA_PS, errs))]
    ok = all(SPSA_RATIO_RANGE[0] <= r <= SPSA_RATIO_RANGE[1] for r in ratios)
    return SuiteResult("spsa_bias", ok,
                       f"error ratios {', '.join(f'{r:.3f}' for r in ratios)} (need [1.6, 2.4]); fitted order in p {order:.2f}",
                       {"spsa_bias.csv": (list(rows[0]), rows)}, {"ratios": ratios, "order": order})


# --- criterion 10 ----------------------------------------------------------------
def _actor_run(instance, job):
    n, lam, seed = job
    m, template, feats, mu_floor = instance
    cfg = ActorConfig(n=n, lam=lam, seed=seed, mu_floor=mu_floor, critic_init="warm")
    res = run_mv_spsa_ac(m, template, feats, cfg, record_critic_errors=False)
    final = G.gradient_bundle(m, template.with_theta(res.theta_final), 0, lam)
    return dict(n=n, lam=lam, seed=seed, mean_grad_norm_sq=res.expected_grad_norm_sq,
                grad_norm_sq_theta_r=float(res.grad_norm_trace[res.r_index]),
                theta_final_0=float(res.theta_final[0]), theta_final_1=float(res.theta_final[1]),
                variance_final=final.variance, j_final=final.j)


def suite_actor(seed: int, replications: int | None) -> SuiteResult:
    seeds = replications or 20
    run = partial(_actor_run, instances.actor_reference())
    jobs = [(n, ACTOR_DECAY_LAM, seed * 1000 + i) for n in ACTOR_NS for i in range(seeds)]
    jobs += [(ACTOR_SWEEP_N, lam, seed * 1000 + i) for lam in ACTOR_LAMS if lam != ACTOR_DECAY_LAM or ACTOR_SWEEP_N not in ACTOR_NS
             for i in range(seeds)]
    threads = default_threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]

    decay = [float(np.mean([r["mean_grad_norm_sq"] for r in rows if r["n"] == n and r["lam"] == ACTOR_DECAY_LAM])) for n in ACTOR_NS]
    slope = log_slope(ACTOR_NS, decay)
    monotone = all(decay[i + 1] <= decay[i] for i in range(len(decay) - 1))
    sweep = [float(np.mean([r["variance_final"] for r in rows if r["n"] == ACTOR_SWEEP_N and r["lam"] == lam])) for lam in ACTOR_LAMS]
    sweep_ok = all(sweep[i + 1] <= sweep[i] for i in range(len(sweep) - 1))
    ok = monotone and slope <= ACTOR_SLOPE_MAX and sweep_ok
    summary_rows = [dict(kind="decay", key=n, value=v) for n, v in zip(ACTOR_NS, decay)]
    summary_rows += [dict(kind="slope", key=ACTOR_DECAY_LAM, value=slope)]
    summary_rows += [dict(kind="variance_final", key=lam, value=v) for lam, v in zip(ACTOR_LAMS, sweep)]
    return SuiteResult(
        "actor", ok,
        f"grad-norm^2 {', '.join(f'{v:.3g}' for v in decay)} over n={ACTOR_NS}, slope {slope:.3f} (need <= -0.15); "
        f"final variance {', '.join(f'{v:.4f}' for v in sweep)} over lambda={ACTOR_LAMS}",
        {"actor_runs.csv": (list(rows[0]), rows), "actor_summary.csv": (list(summary_rows[0]), summary_rows)},
        {"decay": decay, "slope": slope, "sweep": sweep},
    )


SUITES = {
    "fixed_point": suite_fixed_point,
    "bound_validity": suite_bound_validity,
    "tail_rate": suite_tail_rate,
    "regularized": suite_regularized,
    "high_probability": suite_high_probability,
    "contraction": suite_contraction,
    "gradient_oracles": suite_gradient_oracles,
    "smoothness": suite_smoothness,
    "spsa_bias": suite_spsa_bias,
    "actor": suite_actor,
}
ORDER = tuple(SUITES) + ("reproducibility",)
CRITERION = {name: i + 1 for i, name in enumerate(ORDER)}
ALIASES = {
    **{f"C{i + 1}": name for i, name in enumerate(ORDER)},
    "T1": "bound_validity", "T2": "tail_rate", "T3": "regularized",
    "T4": "high_probability", "T5": "high_probability", "T6": "actor",
}
DEFAULT_SEEDS = {name: 11 for name in ORDER}


def resolve_suite(name: str) -> list[str]:
    if name == "all":
        return list(ORDER)
    name = ALIASES.get(name, name)
    if name not in ORDER:
        raise ParseError(f"unknown suite {name!r}; choose from {', '.join(ORDER)}, C1..C11, T1..T6 or all")
    return [name]


# --- persistence -------------------------------------------------------------------
def run_suite(name: str, out_dir, seed: int | None = None, replications: int | None = None) -> SuiteResult:
    """Run one named suite and write its CSVs and manifest under ``out_dir/name``."""
    if name == "reproducibility":
        return suite_reproducibility(out_dir, seed, replications)
    seed = DEFAULT_SEEDS[name] if seed is None else seed
    t0 = time.perf_counter()
    res = SUITES[name](seed, replications)
    res.seconds = time.perf_counter() - t0
    target = Path(out_dir) / name
    for fname, (cols, rows) in res.tables.items():
        res.files.append(write_csv(target / fname, cols, rows))
    write_manifest(target, "verify", {"suite": name, "seed": seed, "replications": replications},
                   seed, res.files, res.seconds)
    return res


def rerun_from_manifest(manifest_path, out_dir) -> SuiteResult:
    cfg = json.loads(Path(manifest_path).read_text())["config"]
    return run_suite(cfg["suite"], out_dir, cfg["seed"], cfg["replications"])


def compare_manifest(manifest_path, rerun_dir) -> list[dict]:
    data = json.loads(Path(manifest_path).read_text())
    suite = data["config"]["suite"]
    rows = []
    for fname, digest in sorted(data["files"].items()):
        new = Path(rerun_dir) / suite / fname
        again = sha256(new) if new.exists() else ""
        rows.append(dict(suite=suite, file=fname, sha256=digest, rerun_sha256=again, identical=again == digest))
    return rows


def suite_reproducibility(out_dir, seed: int | None, replications: int | None) -> SuiteResult:
    """Rerun every other suite from its manifest and compare CSV checksums.

    Suites without a manifest under ``out_dir`` are run first.
    """
    t0 = time.perf_counter()
    rows = []
    with tempfile.TemporaryDirectory() as tmp:
        for name in SUITES:
            manifest = Path(out_dir) / name / "manifest.json"
            if not manifest.exists():
                run_suite(name, out_dir, seed, replications)
            rerun_from_manifest(manifest, tmp)
            rows.extend(compare_manifest(manifest, tmp))
    ok = bool(rows) and all(r["identical"] for r in rows)
    res = SuiteResult("reproducibility", ok, f"{sum(r['identical'] for r in rows)}/{len(rows)} CSVs byte-identical on rerun",
                      {"reproducibility.csv": (list(rows[0]), rows)})
    res.seconds = time.perf_counter() - t0
    target = Path(out_dir) / "reproducibility"
    res.files.append(write_csv(target / "reproducibility.csv", list(rows[0]), rows))
    write_manifest(target, "verify", {"suite": "reproducibility", "seed": seed, "replications": replications},
                   seed, res.files, res.seconds)
    return res
