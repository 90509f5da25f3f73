"""Command-line entry point: ``mvtd {fixed-point,critic,actor,grad-check,verify}``.

Exit codes: 0 success, 2 bad configuration or input, 3 a mathematical
regime the bounds need is violated, 4 a verification suite failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import __version__
from .. import gradients as G
from ..actor import ActorConfig, run_mv_spsa_ac
from ..critic import CriticConfig, estimate_statistics, geometric_checkpoints, run_critic
from ..errors import ConfigError, MvtdError, StepSizeTooLarge
from ..system import theorem_bound
from .config import Experiment, load_config
from .output import write_csv, write_manifest
from .suites import CRITERION, resolve_suite, run_suite

EXIT_OK, EXIT_CONFIG, EXIT_REGIME, EXIT_VERIFY = 0, 2, 3, 4
CRITIC_COLUMNS = ["run_id", "t", "variant", "err_last", "err_tail", "bound_T1", "bound_T2", "projected_flag"]


def _fmt_vec(v) -> str:
    return "(" + ", ".join(f"{float(x):.10g}" for x in v) + ")"


def _apply_overrides(exp: Experiment, args) -> Experiment:
    cfg = exp.config
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
        changes["actor"] = {**cfg.actor, "seed": args.seed}
    if getattr(args, "replications", None) is not None:
        changes["replications"] = args.replications
    if getattr(args, "override_step_size", False):
        changes["override_step_size"] = True
    if getattr(args, "out", None) is not None:
        changes["out"] = args.out
    return replace(exp, config=replace(cfg, **changes)) if changes else exp


def _out_dir(exp: Experiment, command: str) -> Path:
    return Path(exp.config.out) / command


# --- subcommands -----------------------------------------------------------------
def cmd_fixed_point(exp: Experiment, args) -> int:
    s, cfg = exp.system, exp.config
    q = exp.features.q
    lines = ["M = [" + ", ".join(_fmt_vec(row) for row in s.m_mat) + "]",
             f"xi = {_fmt_vec(s.xi)}",
             f"w_bar = {_fmt_vec(s.w_bar)}",
             f"v_bar = {_fmt_vec(s.w_bar[:q])}",
             f"u_bar = {_fmt_vec(s.w_bar[q:])}",
             f"mu = {s.mu:.10g}",
             f"iota = {s.iota:.10g}",
             f"c = {s.c_const:.10g}",
             f"beta_max = {s.beta_max:.10g}",
             f"sigma^2 = {s.sigma_sq:.10g}"]
    if s.zeta is not None:
        lines += [f"zeta = {s.zeta:.10g}", f"w_bar_reg = {_fmt_vec(s.w_bar_reg)}",
                  f"c_check = {s.c_check:.10g}", f"beta_check_max = {s.beta_check_max:.10g}"]
    if s.h_radius is not None:
        lines += [f"H = {s.h_radius:.10g}", f"tau = {s.tau:.10g}"]
    print("\n".join(lines))
    rows = [dict(quantity="w_bar", index=i, value=float(x)) for i, x in enumerate(s.w_bar)]
    rows += [dict(quantity=name, index=0, value=float(v)) for name, v in (
        ("mu", s.mu), ("iota", s.iota), ("lambda_max", s.lam_max), ("c", s.c_const),
        ("beta_max", s.beta_max), ("sigma_sq", s.sigma_sq))]
    if s.zeta is not None:
        rows += [dict(quantity="w_bar_reg", index=i, value=float(x)) for i, x in enumerate(s.w_bar_reg)]
        rows += [dict(quantity="c_check", index=0, value=s.c_check),
                 dict(quantity="beta_check_max", index=0, value=s.beta_check_max)]
    out = _out_dir(exp, "fixed-point")
    path = write_csv(out / "fixed_point.csv", ["quantity", "index", "value"], rows)
    write_manifest(out, "fixed-point", cfg.to_dict(), cfg.seed, [path], 0.0)
    return EXIT_OK


def cmd_critic(exp: Experiment, args) -> int:
    cfg, s = exp.config, exp.system
    t0 = time.perf_counter()
    cps = geometric_checkpoints(cfg.t) if cfg.checkpoints == "geometric" else tuple(cfg.checkpoints)
    ccfg = CriticConfig(
        t=cfg.t, k=cfg.k, beta=cfg.beta, zeta=cfg.zeta, h_radius=cfg.h_radius, seed=cfg.seed,
        checkpoints=cps, checkpoint_tail_fraction=cfg.k / cfg.t, override_step_size=cfg.override_step_size,
    )
    if cfg.replications == 1:
        runs = [run_critic(exp.mdp, exp.policy, exp.features, replace(ccfg, seed=(cfg.seed, 0)),
                           chain=exp.chain, system=s, reference=s.w_bar)]
    else:
        runs = estimate_statistics(exp.mdp, exp.policy, exp.features, ccfg, cfg.replications, s.w_bar,
                                   chain=exp.chain, system=s, keep_results=True).results
    z0 = float(s.w_bar @ s.w_bar)
    bounds = {}
    for c in cps:
        b1 = b2 = math.nan
        if cfg.variant == "plain":
            try:
                b1 = theorem_bound("T1_last", s, t=c - 1, beta=cfg.beta, init_err=z0)
                b2 = theorem_bound("T2_tail", s, t=c, k=int(ccfg.checkpoint_tail_fraction * c), beta=cfg.beta,
                                   init_err=z0)
            except StepSizeTooLarge:
                pass  # bounds do not apply above beta_max
        bounds[c] = (b1, b2)
    rows = []
    for i, r in enumerate(runs):
        flags = r.projected_flags
        for j, c in enumerate(r.checkpoints):
            rows.append([i, int(c), cfg.variant, r.error_trace[j, 1], r.error_trace[j, 2],
                         bounds[int(c)][0], bounds[int(c)][1], bool(flags[j])])
    out = _out_dir(exp, "critic")
    path = write_csv(out / "critic.csv", CRITIC_COLUMNS, rows)
    write_manifest(out, "critic", cfg.to_dict(), cfg.seed, [path], time.perf_counter() - t0)
    last = [r for r in rows if r[1] == cps[-1]]
    print(f"{len(runs)} runs of t = {cfg.t} ({cfg.variant}); mean final tail error {np.mean([r[4] for r in last]):.4g}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_actor(exp: Experiment, args) -> int:
    cfg = exp.config
    a = cfg.actor
    t0 = time.perf_counter()
    acfg = ActorConfig(
        n=int(a["n"]), lam=float(a["lam"]), s0=int(a["s0"]), seed=int(a["seed"]), alpha=a["alpha"], p=a["p"],
        m=a["m"], k=a["k"], critic_beta=a["critic_beta"], mu_floor=a["mu_floor"],
        recompute_beta=bool(a["recompute_beta"]) or (a["critic_beta"] is None and a["mu_floor"] is None),
        variance_threshold=float(a["variance_threshold"]), critic_init=a["critic_init"],
    )
    template = exp.softmax_template()
    res = run_mv_spsa_ac(exp.mdp, template, exp.features, acfg)
    d = template.d
    cols = ["iter"] + [f"theta_{i}" for i in range(d)] + [
        "grad_norm_sq_exact", "j_hat", "u_hat", "critic_err_base", "critic_err_pert"]
    dg = res.diagnostics
    rows = [[t + 1, *res.theta_trace[t], res.grad_norm_trace[t], dg["j_hat"][t], dg["u_hat"][t],
             dg["critic_err_base"][t], dg["critic_err_pert"][t]] for t in range(acfg.n)]
    out = _out_dir(exp, "actor")
    path = write_csv(out / "actor.csv", cols, rows)
    write_manifest(out, "actor", cfg.to_dict(), acfg.seed, [path], time.perf_counter() - t0)
    final = G.gradient_bundle(exp.mdp, template.with_theta(res.theta_final), acfg.s0, acfg.lam)
    print(f"theta_R = {_fmt_vec(res.theta_r)} (iteration {res.r_index + 1}); final theta = {_fmt_vec(res.theta_final)}")
    print(f"mean |grad L|^2 = {res.expected_grad_norm_sq:.4g}; final J = {final.j:.6g}, variance = {final.variance:.6g}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_grad_check(exp: Experiment, args) -> int:
    cfg = exp.config
    a = cfg.actor
    template = exp.softmax_template()
    s0, lam = int(a["s0"]), float(a["lam"])
    th = template.theta
    b = G.gradient_bundle(exp.mdp, template, s0, lam)
    fd_j = G.finite_difference(lambda t: G.exact_j(exp.mdp, template.with_theta(t), s0), th)
    fd_u = G.finite_difference(lambda t: G.exact_u(exp.mdp, template.with_theta(t), s0), th)
    print(f"grad J exact {_fmt_vec(b.grad_j)}  finite-diff {_fmt_vec(fd_j)}")
    print(f"grad U exact {_fmt_vec(b.grad_u)}  finite-diff {_fmt_vec(fd_u)}")
    print(f"grad L exact {_fmt_vec(b.grad_l)}  (lambda = {lam:g})")
    rows = [dict(quantity=f"grad_{name}", index=i, exact=float(e), finite_difference=float(f))
            for name, ex, fd in (("J", b.grad_j, fd_j), ("U", b.grad_u, fd_u)) for i, (e, f) in enumerate(zip(ex, fd))]
    try:
        consts = G.instance_constants(exp.mdp, template.action_features, lam)
    except ConfigError as exc:
        print(f"smoothness constants unavailable: {exc}")
    else:
        for name, v in vars(consts).items():
            print(f"{name} = {v:.6g}")
            rows.append(dict(quantity=name, index=0, exact=float(v), finite_difference=math.nan))
    out = _out_dir(exp, "grad-check")
    path = write_csv(out / "grad_check.csv", ["quantity", "index", "exact", "finite_difference"], rows)
    write_manifest(out, "grad-check", cfg.to_dict(), cfg.seed, [path], 0.0)
    return EXIT_OK


def cmd_verify(args) -> int:
    out = Path(args.out or "runs") / "verify"
    if args.config:
        data = json.loads(Path(args.config).read_text())
        snap = data.get("config", data)
        names = resolve_suite(snap["suite"])
        seed = snap.get("seed") if args.seed is None else args.seed
        reps = snap.get("replications") if args.replications is None else args.replications
    else:
        names = resolve_suite(args.suite)
        seed, reps = args.seed, args.replications
    results = [run_suite(name, out, seed, reps) for name in names]
    width = max(len(r.name) for r in results)
    print(f"{'criterion':>9}  {'suite':<{width}}  result  seconds  detail")
    for r in results:
        print(f"{CRITERION[r.name]:>9}  {r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:7.1f}  {r.summary}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


# --- parser ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvtd", description="Mean-variance TD critics and the SPSA actor-critic.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log resolved auto-values")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON config or run manifest")
        sp.add_argument("--seed", type=int, help="override the base seed")
        sp.add_argument("--out", help="output directory (default: config 'out')")
        sp.add_argument("--replications", type=int, help="override the replication count")
        sp.add_argument("--override-step-size", action="store_true", help="allow beta above the theoretical ceiling")

    for name, helptext in (("fixed-point", "projected fixed point and spectral constants"),
                           ("critic", "replicated critic runs with bound columns"),
                           ("actor", "one MV-SPSA actor-critic run"),
                           ("grad-check", "exact vs finite-difference gradients and smoothness constants")):
        common(sub.add_parser(name, help=helptext))
    v = sub.add_parser("verify", help="run acceptance suites and print a pass/fail table")
    common(v, config_required=False)
    v.add_argument("--suite", default="all", help="suite name, C1..C11, T1..T6, or 'all'")
    return p


COMMANDS = {"fixed-point": cmd_fixed_point, "critic": cmd_critic, "actor": cmd_actor, "grad-check": cmd_grad_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if args.command == "verify":
            return cmd_verify(args)
        exp = _apply_overrides(load_config(args.config), args)
        return COMMANDS[args.command](exp, args)
    except MvtdError as exc:
        print(f"mvtd: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
