"""JSON experiment configuration: parsing, defaults and materialized auto-values."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .. import instances
from ..errors import ConstraintViolation, ParseError
from ..features import FeatureSet, build_feature_set, identity_features, random_features
from ..gradients import SoftmaxPolicy, tabular_action_features
from ..mdp import Mdp, OnPolicyChain, TabularPolicy, generate_mdp, induced_chain, mdp_from_dict, uniform_policy
from ..system import CriticSystem, build_critic_system

log = logging.getLogger(__name__)

VARIANTS = ("plain", "regularized", "projected", "regularized_projected")
H_FACTOR = 1.1
NAMED_MDPS = {
    "one_state": instances.one_state,
    "two_cycle": instances.two_cycle,
    "five_state_chain": instances.five_state_chain,
    "stochastic_pair": instances.stochastic_pair,
    "actor_reference": instances.actor_reference_mdp,
}
ACTOR_DEFAULTS = {
    "n": 256, "lam": 0.0, "s0": 0, "seed": None, "alpha": None, "p": None, "m": None, "k": None,
    "critic_beta": None, "mu_floor": None, "recompute_beta": False, "critic_init": "zero",
    "action_feature_scale": 1.0, "theta0": None, "variance_threshold": 0.0,
}
TOP_KEYS = (
    "mdp", "policy", "features", "variant", "t", "k", "beta", "zeta", "h_radius",
    "replications", "delta", "checkpoints", "actor", "out", "seed", "override_step_size",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully resolved experiment: every ``"auto"`` is replaced by a number."""

    mdp: dict
    policy: Any = "uniform"
    features: dict = field(default_factory=lambda: {"kind": "identity", "scale": 1.0})
    variant: str = "plain"
    t: int = 10000
    k: int | None = None
    beta: float | None = None
    zeta: float | None = None
    h_radius: float | None = None
    replications: int = 10
    delta: float = 0.1
    checkpoints: Any = "geometric"
    actor: dict = field(default_factory=lambda: dict(ACTOR_DEFAULTS))
    out: str = "runs"
    seed: int = 0
    override_step_size: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def regularized(self) -> bool:
        return self.variant.startswith("regularized")

    @property
    def projected(self) -> bool:
        return self.variant.endswith("projected")


@dataclass(frozen=True, eq=False)
class Experiment:
    """The objects a config describes."""

    config: ExperimentConfig
    mdp: Mdp
    policy: TabularPolicy
    features: FeatureSet
    chain: OnPolicyChain | None
    system: CriticSystem | None

    def softmax_template(self) -> SoftmaxPolicy:
        a = self.config.actor
        x = float(a["action_feature_scale"]) * tabular_action_features(self.mdp.num_states, self.mdp.num_actions)
        theta0 = np.zeros(x.shape[-1]) if a["theta0"] is None else np.asarray(a["theta0"], dtype=float)
        if theta0.shape != (x.shape[-1],):
            raise ConstraintViolation(f"actor.theta0 must have length {x.shape[-1]}")
        return SoftmaxPolicy(theta0, x)


# --- parsing helpers ---------------------------------------------------------
def _line_of(text: str, key: str) -> int | None:
    if not text:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return None if m is None else text.count("\n", 0, m.start()) + 1


def _fail(text: str, key: str, msg: str) -> ParseError:
    line = _line_of(text, key.split(".")[-1])
    where = f"line {line}, field {key!r}" if line else f"field {key!r}"
    return ParseError(f"{where}: {msg}")


def _int(raw: dict, key: str, text: str, default=None, *, minimum: int | None = None, path: str = ""):
    if key not in raw or raw[key] is None:
        return default
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (isinstance(v, float) and not v.is_integer()):
        raise _fail(text, path + key, f"expected an integer, got {v!r}")
    v = int(v)
    if minimum is not None and v < minimum:
        raise _fail(text, path + key, f"must be >= {minimum}, got {v}")
    return v


def _num_or_auto(raw: dict, key: str, text: str, default, *, allow_none: bool = True):
    v = raw.get(key, default)
    if v is None and allow_none:
        return None
    if v == "auto":
        return "auto"
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise _fail(text, key, f'expected a number or "auto", got {v!r}')
    return float(v)


# --- builders ----------------------------------------------------------------
def build_mdp(spec: dict, base_dir: Path | None = None) -> Mdp:
    kind = spec.get("kind", "inline")
    if kind == "inline":
        return mdp_from_dict(spec)
    if kind == "named":
        name = spec.get("name")
        if name not in NAMED_MDPS:
            raise ParseError(f"field 'mdp.name': unknown instance {name!r}; choose from {sorted(NAMED_MDPS)}")
        return NAMED_MDPS[name](**spec.get("params", {}))
    if kind == "file":
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return generate_mdp("file", {"path": str(path)})
    if kind in ("chain", "garnet"):
        params = dict(spec.get("params", {}))
        if kind == "garnet":
            params["seed"] = spec.get("seed", params.get("seed", 0))
        return generate_mdp(kind, params)
    raise ParseError(f"field 'mdp.kind': unknown kind {kind!r}")


def build_policy(spec, mdp: Mdp) -> TabularPolicy:
    if spec == "uniform":
        return uniform_policy(mdp)
    probs = np.asarray(spec, dtype=float)
    if probs.shape != (mdp.num_states, mdp.num_actions):
        raise ConstraintViolation(f"policy must have shape {(mdp.num_states, mdp.num_actions)}, got {probs.shape}")
    return TabularPolicy(probs)


def build_features(spec: dict, mdp: Mdp, chain: OnPolicyChain | None) -> FeatureSet:
    kind = spec.get("kind", "identity")
    if kind == "identity":
        return identity_features(mdp.num_states, float(spec.get("scale", 1.0)))
    if kind == "random":
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        return random_features(mdp.num_states, int(spec["q"]), chain, rng, float(spec.get("scale", 1.0)))
    if kind == "explicit":
        return build_feature_set(spec["phi_v"], spec["phi_u"], chain)
    raise ParseError(f"field 'features.kind': unknown kind {kind!r}")


# --- loading -----------------------------------------------------------------
def parse_config(raw: dict, text: str = "", base_dir: Path | None = None) -> Experiment:
    """Validate a raw dict, fill defaults and materialize auto-values."""
    if not isinstance(raw, dict):
        raise ParseError("top level must be a JSON object")
    if "files" in raw and "config" in raw:  # a run manifest
        raw = raw["config"]
    unknown = sorted(set(raw) - set(TOP_KEYS))
    if unknown:
        raise _fail(text, unknown[0], "unknown field")
    if "mdp" not in raw or not isinstance(raw["mdp"], dict):
        raise _fail(text, "mdp", "an mdp object is required")

    variant = raw.get("variant", "plain")
    if variant not in VARIANTS:
        raise _fail(text, "variant", f"expected one of {VARIANTS}, got {variant!r}")
    t = _int(raw, "t", text, 10000, minimum=1)
    k = _int(raw, "k", text, t // 2, minimum=0)
    if k >= t:
        raise ConstraintViolation(f"tail index k = {k} must be smaller than t = {t}")
    replications = _int(raw, "replications", text, 10, minimum=1)
    seed = _int(raw, "seed", text, 0)
    delta = _num_or_auto(raw, "delta", text, 0.1, allow_none=False)
    if delta == "auto" or not 0 < delta <= 1:
        raise _fail(text, "delta", "must lie in (0, 1]")
    beta = _num_or_auto(raw, "beta", text, "auto")
    zeta = _num_or_auto(raw, "zeta", text, "auto" if variant.startswith("regularized") else None)
    h = _num_or_auto(raw, "h_radius", text, "auto" if variant.endswith("projected") else None)
    checkpoints = raw.get("checkpoints", "geometric")
    if checkpoints != "geometric" and not (
        isinstance(checkpoints, list) and all(isinstance(c, int) and 1 <= c <= t for c in checkpoints)
    ):
        raise _fail(text, "checkpoints", 'expected "geometric" or a list of integers in [1, t]')
    actor_raw = raw.get("actor", {}) or {}
    if not isinstance(actor_raw, dict):
        raise _fail(text, "actor", "expected an object")
    bad = sorted(set(actor_raw) - set(ACTOR_DEFAULTS))
    if bad:
        raise _fail(text, "actor." + bad[0], "unknown field")
    actor = {**ACTOR_DEFAULTS, **actor_raw}
    if actor["seed"] is None:
        actor["seed"] = seed
    if actor["critic_init"] not in ("zero", "warm"):
        raise _fail(text, "actor.critic_init", 'expected "zero" or "warm"')

    if variant.startswith("regularized"):
        if zeta == "auto":
            zeta = 1.0 / math.sqrt(t - k)
            log.info("auto zeta = 1/sqrt(t - k) = %.6g", zeta)
        elif zeta is None or zeta <= 0:
            raise ConstraintViolation("the regularized variant needs zeta > 0")
    elif zeta is not None:
        raise ConstraintViolation(f"zeta is only meaningful for regularized variants, got {zeta}")
    if not variant.endswith("projected") and h is not None:
        raise ConstraintViolation("h_radius is only meaningful for projected variants")

    mdp = build_mdp(raw["mdp"], base_dir)
    policy = build_policy(raw.get("policy", "uniform"), mdp)
    chain = induced_chain(mdp, policy)
    features = build_features(raw.get("features", {"kind": "identity"}), mdp, chain)
    system = build_critic_system(chain, features, mdp.gamma, mdp.r_max, zeta=zeta)
    if h == "auto":
        h = H_FACTOR * float(np.linalg.norm(system.xi)) / system.mu
        log.info("auto H = %.1f |xi| / mu = %.6g", H_FACTOR, h)
    if h is not None:
        system = system.with_h_radius(h)
    if beta == "auto":
        beta = system.beta_check_max if zeta is not None else system.beta_max
        log.info("auto beta = %.6g", beta)
    elif beta is None:
        raise _fail(text, "beta", 'expected a number or "auto"')

    mdp_spec = dict(raw["mdp"])
    if mdp_spec.get("kind") == "file" and base_dir is not None and not Path(mdp_spec["path"]).is_absolute():
        mdp_spec["path"] = str((base_dir / mdp_spec["path"]).resolve())
    cfg = ExperimentConfig(
        mdp=mdp_spec,
        policy=raw.get("policy", "uniform"),
        features=dict(raw.get("features", {"kind": "identity", "scale": 1.0})),
        variant=variant, t=t, k=k, beta=float(beta), zeta=zeta, h_radius=h,
        replications=replications, delta=float(delta), checkpoints=checkpoints,
        actor=actor, out=str(raw.get("out", "runs")), seed=seed,
        override_step_size=bool(raw.get("override_step_size", False)),
    )
    return Experiment(cfg, mdp, policy, features, chain, system)


def load_config(path) -> Experiment:
    """Read a JSON config (or a run manifest) and resolve it."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    try:
        return parse_config(raw, text, path.parent)
    except KeyError as exc:
        raise _fail(text, str(exc.args[0]), "missing required field") from exc
