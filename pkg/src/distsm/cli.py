"""Command-line driver.

``distsm <command> [options]`` with commands ``dp``, ``td``, ``eval``,
``oracle``, ``recover`` and ``validate``.  Every run resolves one
configuration (defaults, then ``--config`` file, then flags), validates it
before computing anything, and writes it as ``config.json`` next to the
artifacts, so ``--config <run>/config.json`` reproduces the run.

Exit codes: 0 success, 2 configuration, 3 missing artifact, 4 numeric
failure.  Failures print an error JSON to stderr (and to ``error.json`` in
the output directory when it is known).
"""

import argparse
import copy
import hashlib
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dp import PROJECTIONS, DeltaModel, dp_iterate
from .environments import env_from_config
from .evaluation import (
    ReturnDistribution,
    cramer_distance,
    default_horizon,
    discounted_returns,
    mc_oracle,
    occupancy_particles,
    oracle_trajectories,
    parse_criterion,
    rank_distributions,
    return_range,
    returns_from_dsm,
    risk_report,
)
from .exceptions import ConfigurationError, DsmError, MissingArtifactError
from .io import (
    read_model_csv,
    validate_file,
    write_csv,
    write_json,
    write_matrix_csv,
    write_model_csv,
)
from .kernels import DEFAULT_ALPHAS, GramCache, ModelKernelSpec, StateKernelSpec
from .mdp import build_ppi, check_gamma, write_trajectories_csv
from .sr import compute_sm, recover_transition
from .td import TdConfig, train
from .transport import CostMatrix

COMMON = {
    "env": {"name": "three_state_c1", "params": {}},
    "gamma": 0.95,
    "seed": 0,
    "threads": 1,
    "out": "out",
}
KERNEL = {"family": "rational_quadric_mixture", "mixture_alphas": list(DEFAULT_ALPHAS), "length_scale": 1.0, "sigma": None}
DP = {"iters": None, "tol": 1e-6, "projection": "barycentric", "freeze_after": "auto", "max_atoms": 20_000}
TD = {
    "n_step": 5,
    "learning_rate": 1e-2,
    "polyak_lambda": 0.01,
    "batch_size": 32,
    "steps": 10_000,
    "eval_every": 0,
    "init_scale": 1.0,
    "nstep_sweep": None,
    "reference": None,
}
EVAL = {
    "models": [],
    "rewards": [],
    "x0": 0,
    "criteria": ["mean", "cvar(0.4)"],
    "oracle": False,
    "n_traj": 10_000,
    "horizon": None,
}
ORACLE = {"x0": 0, "n_traj": 10_000, "horizon": None, "rewards": [], "save_trajectories": False}

DEFAULTS = {
    "dp": {**COMMON, "m": 32, "kernel": KERNEL, "dp": DP},
    "td": {**COMMON, "m": 16, "kernel": KERNEL, "dp": DP, "td": TD},
    "eval": {**COMMON, "eval": EVAL},
    "oracle": {**COMMON, "oracle": ORACLE},
    "recover": {**COMMON},
}


# ---------------------------------------------------------------- config


def _merge(base, extra, path=""):
    for key, value in extra.items():
        if key not in base:
            raise ConfigurationError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and key != "env" and isinstance(value, dict):
            _merge(base[key], value, f"{path}{key}.")
        else:
            base[key] = copy.deepcopy(value)


def _load_config_file(path):
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"config file not found: {path}", path=str(path))
    text = path.read_text()
    try:
        if path.suffix in (".yaml", ".yml"):
            import yaml

            doc = yaml.safe_load(text)
        else:
            doc = json.loads(text)
    except Exception as exc:  # malformed file of either format
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError("config file must hold a mapping")
    return doc


def _scalar(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_x0(value):
    if isinstance(value, str):
        parts = [p for p in value.split(",") if p.strip()]
        if len(parts) == 1:
            return int(parts[0])
        return [float(p) for p in parts]
    return value


def parse_sweep(text):
    """``"1..10"`` or ``"1,2,5"`` to a list of positive ints."""
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        values = [int(v) for v in text]
    else:
        m = re.fullmatch(r"\s*(\d+)\s*\.\.\s*(\d+)\s*", str(text))
        if m:
            values = list(range(int(m.group(1)), int(m.group(2)) + 1))
        else:
            try:
                values = [int(v) for v in str(text).split(",") if v.strip()]
            except ValueError:
                raise ConfigurationError(f"cannot parse n-step sweep {text!r}") from None
    if not values or min(values) < 1:
        raise ConfigurationError(f"n-step sweep needs positive integers, got {text!r}")
    return values


def resolve_config(command, args):
    cfg = copy.deepcopy(DEFAULTS[command])
    if getattr(args, "config", None):
        doc = _load_config_file(args.config)
        doc.pop("schema", None)
        doc.pop("version", None)
        doc.pop("tool", None)
        found = doc.pop("command", command)
        if found != command:
            raise ConfigurationError(f"config was written for {found!r}, not {command!r}")
        _merge(cfg, doc)

    a = vars(args)

    def put(path, value):
        if value is None:
            return
        node = cfg
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = value

    if a.get("env_config"):
        cfg["env"] = _load_config_file(a["env_config"])
    if a.get("env"):
        cfg["env"] = {"name": a["env"], "params": {}}
    for item in a.get("env_param") or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--env-param expects key=value, got {item!r}")
        cfg["env"].setdefault("params", {})[key] = _scalar(value)
    for key in ("gamma", "seed", "threads", "out", "m"):
        if key in cfg:
            put((key,), a.get(key))
    if "kernel" in cfg:
        put(("kernel", "sigma"), a.get("sigma"))
        put(("kernel", "family"), a.get("kernel_family"))
        put(("kernel", "length_scale"), a.get("length_scale"))
        if a.get("kernel_alphas"):
            cfg["kernel"]["mixture_alphas"] = [float(v) for v in a["kernel_alphas"].split(",")]
    if "dp" in cfg:
        for key in ("iters", "tol", "projection", "max_atoms"):
            put(("dp", key), a.get(key))
        if a.get("freeze_after") is not None:
            v = a["freeze_after"]
            cfg["dp"]["freeze_after"] = None if v == "none" else v if v == "auto" else int(v)
    if "td" in cfg:
        for key in ("n_step", "learning_rate", "polyak_lambda", "batch_size", "steps", "eval_every", "init_scale", "reference"):
            put(("td", key), a.get(key))
        put(("td", "nstep_sweep"), a.get("nstep_sweep"))
    if command == "eval":
        if a.get("model"):
            cfg["eval"]["models"] = list(a["model"])
        if a.get("reward"):
            cfg["eval"]["rewards"] = list(a["reward"])
        if a.get("criterion"):
            cfg["eval"]["criteria"] = list(a["criterion"])
        put(("eval", "x0"), _parse_x0(a["x0"]) if a.get("x0") is not None else None)
        if a.get("oracle"):
            cfg["eval"]["oracle"] = True
        put(("eval", "n_traj"), a.get("n_traj"))
        put(("eval", "horizon"), a.get("horizon"))
    if command == "oracle":
        put(("oracle", "x0"), _parse_x0(a["x0"]) if a.get("x0") is not None else None)
        put(("oracle", "n_traj"), a.get("n_traj"))
        put(("oracle", "horizon"), a.get("horizon"))
        if a.get("reward"):
            cfg["oracle"]["rewards"] = list(a["reward"])
        if a.get("save_trajectories"):
            cfg["oracle"]["save_trajectories"] = True
    validate_config(command, cfg)
    return cfg


def _positive_int(value, name, allow_none=False):
    if value is None and allow_none:
        return
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
        raise ConfigurationError(f"{name} must be a positive integer", value=value)


def validate_config(command, cfg):
    """Reject anything malformed before work starts."""
    try:
        check_gamma(cfg["gamma"])
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from None
    if isinstance(cfg["seed"], bool) or not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigurationError("seed must be a non-negative integer", value=cfg["seed"])
    _positive_int(cfg["threads"], "threads")
    if not isinstance(cfg["env"], dict) or "name" not in cfg["env"]:
        raise ConfigurationError("env needs a name")
    env_from_config(cfg["env"])
    if "m" in cfg:
        _positive_int(cfg["m"], "m")
    if "kernel" in cfg:
        k = cfg["kernel"]
        try:
            StateKernelSpec(k["family"], tuple(k["mixture_alphas"]), float(k["length_scale"]))
            ModelKernelSpec(k["sigma"])
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"invalid kernel: {exc}") from None
    if "dp" in cfg:
        d = cfg["dp"]
        _positive_int(d["iters"], "iters", allow_none=True)
        _positive_int(d["max_atoms"], "max_atoms")
        if not isinstance(d["tol"], (int, float)) or not d["tol"] > 0:
            raise ConfigurationError("tol must be positive", value=d["tol"])
        if d["projection"] not in PROJECTIONS + ("none",):
            raise ConfigurationError(f"unknown projection {d['projection']!r}")
        if d["freeze_after"] not in ("auto", None):
            _positive_int(d["freeze_after"], "freeze_after")
    if "td" in cfg:
        t = cfg["td"]
        _td_config(cfg, t["n_step"])
        t["nstep_sweep"] = parse_sweep(t["nstep_sweep"])
        if t["reference"] not in (None, "dp") and not Path(str(t["reference"])).is_file():
            raise MissingArtifactError(f"reference model not found: {t['reference']}")
    if command == "eval":
        e = cfg["eval"]
        if not e["models"]:
            raise ConfigurationError("eval needs at least one --model")
        for c in e["criteria"]:
            parse_criterion(c)
        _positive_int(e["n_traj"], "n_traj")
        _positive_int(e["horizon"], "horizon", allow_none=True)
    if command == "oracle":
        o = cfg["oracle"]
        _positive_int(o["n_traj"], "n_traj")
        _positive_int(o["horizon"], "horizon", allow_none=True)


def _td_config(cfg, n_step):
    t, k = cfg["td"], cfg["kernel"]
    try:
        return TdConfig(
            gamma=float(cfg["gamma"]),
            n_step=n_step,
            learning_rate=t["learning_rate"],
            polyak_lambda=t["polyak_lambda"],
            batch_size=t["batch_size"],
            steps=t["steps"],
            seed=cfg["seed"],
            m=cfg["m"],
            sigma_policy="median_heuristic" if k["sigma"] is None else "fixed",
            sigma=k["sigma"],
            init_scale=t["init_scale"],
            eval_every=t["eval_every"],
        )
    except TypeError as exc:
        raise ConfigurationError(f"invalid TD settings: {exc}") from None


# ---------------------------------------------------------------- helpers


def _setup(cfg):
    mdp, policy = env_from_config(cfg["env"])
    dm = build_ppi(mdp, policy, cfg["gamma"])
    return mdp, policy, dm


def _kernels(cfg, mdp):
    k = cfg["kernel"]
    spec = StateKernelSpec(k["family"], tuple(k["mixture_alphas"]), float(k["length_scale"]))
    return GramCache.build(spec, mdp.embedding), CostMatrix.from_embedding(mdp.embedding), ModelKernelSpec(k["sigma"])


def _model_meta(cfg, policy, command):
    return {"command": command, "env": cfg["env"], "policy": policy.name, "seed": cfg["seed"]}


def _run_dp(cfg, dm, gram, cost, mks, reference=None):
    d = cfg["dp"]
    init = DeltaModel.initial(dm.n_states, cfg["m"], dm.gamma)
    return dp_iterate(
        init,
        dm,
        gram,
        cost,
        mks,
        iters=d["iters"],
        projection=d["projection"],
        tol=d["tol"],
        reference=reference,
        seed=cfg["seed"],
        freeze_after=d["freeze_after"],
        max_atoms=d["max_atoms"],
        threads=cfg["threads"],
    )


def _dp_summary(model, trace, cost, sm):
    summary = {
        "final_successive_wbar": trace.successive_wbar[-1],
        "iterations": len(trace.iteration),
        "converged": trace.converged,
        "frozen_at": trace.frozen_at,
        "projection_residual": trace.projection_residual,
        "residual_state": trace.residual_state,
        "diameter": cost.diameter,
    }
    if isinstance(model, DeltaModel):
        tv = 0.5 * np.abs(model.atom_mean() - sm.psi).sum(axis=1)
        summary["residual_over_diameter"] = trace.projection_residual / cost.diameter
        summary["mean_tv_to_sm"] = float(tv.max())
    return summary


def _safe(name):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", str(name))


# ---------------------------------------------------------------- commands


def cmd_dp(cfg, out):
    mdp, policy, dm = _setup(cfg)
    gram, cost, mks = _kernels(cfg, mdp)
    model, trace = _run_dp(cfg, dm, gram, cost, mks)
    if isinstance(model, DeltaModel):
        write_model_csv(out / "model.csv", model, _model_meta(cfg, policy, "dp"))
    write_csv(out / "trace.csv", "dp_trace", trace.rows(), {"command": "dp"})
    write_json(out / "summary.json", "dp_summary", _dp_summary(model, trace, cost, compute_sm(dm)))
    return 0


def _target_hash(target_logits):
    return hashlib.sha256(np.ascontiguousarray(target_logits).tobytes()).hexdigest()[:16]


def _train_one(cfg, dm, gram, cost, reference, n_step, out, policy):
    tcfg = _td_config(cfg, n_step)
    hashes = []

    def on_step(step, logits, target):
        if tcfg.eval_every and (step + 1) % tcfg.eval_every == 0 or step + 1 == tcfg.steps:
            hashes.append(_target_hash(target))

    params, trace = train(dm, tcfg, gram, reference=reference, cost=cost, callback=on_step)
    out.mkdir(parents=True, exist_ok=True)
    meta = _model_meta(cfg, policy, "td")
    meta["n_step"] = n_step
    write_csv(out / "trace.csv", "td_trace", trace.rows(), {"command": "td", "n_step": n_step})
    write_model_csv(out / "model.csv", params.to_delta(), meta)
    summary = {
        "n_step": n_step,
        "steps": tcfg.steps,
        "final_loss": trace.loss[-1],
        "final_full_mmd": trace.full_mmd[-1],
        "final_wbar_ref": trace.wbar_ref[-1],
        "target_hashes": hashes,
        "diameter": cost.diameter,
        "td_config": tcfg.to_dict(),
    }
    write_json(out / "summary.json", "td_summary", summary)
    return summary


def cmd_td(cfg, out):
    mdp, policy, dm = _setup(cfg)
    gram, cost, mks = _kernels(cfg, mdp)
    t = cfg["td"]
    reference = None
    ref_info = None
    if t["reference"] == "dp":
        reference, trace = _run_dp(cfg, dm, gram, cost, mks)
        write_model_csv(out / "reference_model.csv", reference, _model_meta(cfg, policy, "dp"))
        ref_info = _dp_summary(reference, trace, cost, compute_sm(dm))
    elif t["reference"] is not None:
        reference, _ = read_model_csv(t["reference"])
        if reference.n_states != dm.n_states or abs(reference.gamma - dm.gamma) > 0:
            raise ConfigurationError("reference model does not match the environment or gamma")
    if t["nstep_sweep"] is None:
        _train_one(cfg, dm, gram, cost, reference, t["n_step"], out, policy)
        return 0
    runs = []
    for n in t["nstep_sweep"]:
        s = _train_one(cfg, dm, gram, cost, reference, n, out / f"n_{n:02d}", policy)
        runs.append({k: s[k] for k in ("n_step", "final_loss", "final_full_mmd", "final_wbar_ref")})
    write_json(out / "sweep.json", "nstep_sweep", {"runs": runs, "reference": ref_info})
    return 0


def _load_models(specs):
    models = {}
    for spec in specs:
        name, sep, path = str(spec).partition("=")
        if not sep:
            name, path = None, spec
        model, meta = read_model_csv(path)
        name = name or meta.get("policy") or Path(path).stem
        if name in models:
            name = f"{name}_{len(models)}"
        models[name] = (model, meta)
    return models


def cmd_eval(cfg, out):
    e = cfg["eval"]
    models = _load_models(e["models"])
    criteria = [parse_criterion(c) for c in e["criteria"]]
    alphas = sorted({a for name, a in criteria if name == "cvar"})
    x0 = e["x0"]
    reports, rankings, scores = [], [], []
    envs = {}
    for pname, (model, meta) in models.items():
        env_cfg = meta.get("env") or cfg["env"]
        mdp, policy = env_from_config(env_cfg)
        if mdp.n_states != model.n_states:
            raise ConfigurationError(f"model {pname!r} does not match its environment")
        envs[pname] = (mdp, build_ppi(mdp, policy, model.gamma))
    bank = next(iter(envs.values()))[0].reward_bank
    rewards = e["rewards"] or sorted(bank)
    for rname in rewards:
        dists, oracle_dists = {}, {}
        for pname, (model, meta) in models.items():
            mdp, dm = envs[pname]
            r = mdp.reward(rname)
            dist = returns_from_dsm(model, x0, r)
            dists[pname] = dist
            dist.to_csv(out / f"returns_{_safe(pname)}_{_safe(rname)}.csv")
            reports.append(risk_report(dist, alphas, pname, rname).to_dict())
            if e["oracle"]:
                odist, _ = mc_oracle(dm, x0, r, e["n_traj"], e["horizon"], cfg["seed"])
                oracle_dists[pname] = odist
                odist.to_csv(out / f"oracle_returns_{_safe(pname)}_{_safe(rname)}.csv")
                width = return_range(r, model.gamma)
                dist_c = cramer_distance(dist, odist)
                scores.append(
                    {
                        "policy": pname,
                        "reward": rname,
                        "cramer": dist_c,
                        "return_range": width,
                        "cramer_over_range": dist_c / width if width > 0 else 0.0,
                        "oracle": risk_report(odist, alphas, pname, rname).to_dict(),
                    }
                )
        ranked = rank_distributions(dists, criteria)
        oracle_ranked = rank_distributions(oracle_dists, criteria) if e["oracle"] else [None] * len(ranked)
        for rk, ork in zip(ranked, oracle_ranked):
            rk["reward"] = rname
            if ork is not None:
                rk["oracle_ordering"] = ork["ordering"]
                rk["oracle_statistics"] = ork["statistics"]
                rk["oracle_ties"] = ork["ties"]
                rk["agrees_with_oracle"] = rk["ordering"] == ork["ordering"]
            rankings.append(rk)
    write_json(out / "risk.json", "risk_report", {"reports": reports, "x0": x0})
    write_json(out / "ranking.json", "ranking", {"rankings": rankings, "x0": x0})
    if e["oracle"]:
        write_json(out / "cramer.json", "cramer_scores", {"scores": scores, "n_traj": e["n_traj"]})
    return 0


def cmd_oracle(cfg, out):
    mdp, policy, dm = _setup(cfg)
    o = cfg["oracle"]
    horizon = o["horizon"] or default_horizon(dm.gamma)
    traj = oracle_trajectories(dm, o["x0"], o["n_traj"], horizon, cfg["seed"])
    occ = occupancy_particles(traj, dm.n_states, dm.gamma)
    write_matrix_csv(out / "occupancy.csv", "occupancy", occ, {"command": "oracle", "gamma": dm.gamma})
    for rname in o["rewards"]:
        returns = discounted_returns(traj, mdp.reward(rname), dm.gamma)
        ReturnDistribution(returns, "monte_carlo").to_csv(out / f"returns_{_safe(rname)}.csv")
    if o["save_trajectories"]:
        write_trajectories_csv(out / "trajectories.csv", traj)
    summary = {"n_traj": o["n_traj"], "horizon": horizon, "x0": o["x0"], "occupancy_mean": occ.mean(axis=0)}
    if np.ndim(o["x0"]) == 0:
        row = compute_sm(dm).psi[int(o["x0"])]
        summary["sm_row"] = row
        summary["occupancy_stderr"] = occ.std(axis=0, ddof=1) / np.sqrt(len(occ))
        summary["max_abs_deviation"] = float(np.abs(occ.mean(axis=0) - row).max())
    write_json(out / "summary.json", "oracle_summary", summary)
    return 0


def cmd_recover(cfg, out):
    mdp, policy, dm = _setup(cfg)
    sm = compute_sm(dm)
    rec = recover_transition(sm)
    write_matrix_csv(out / "sm.csv", "successor_matrix", sm.psi, {"gamma": dm.gamma})
    write_matrix_csv(out / "recovered_transition.csv", "transition", rec.transition, {"gamma": dm.gamma})
    summary = {
        "gamma": dm.gamma,
        "max_abs_error": float(np.abs(rec.transition - dm.p_pi).max()),
        "condition_number": rec.condition_number,
    }
    write_json(out / "summary.json", "recover_summary", summary)
    return 0


def cmd_validate(paths):
    files = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files += sorted(f for f in p.rglob("*") if f.suffix in (".csv", ".json") and f.name != "error.json")
        elif p.exists():
            files.append(p)
        else:
            raise MissingArtifactError(f"no such file or directory: {p}", path=str(p))
    results = [validate_file(f) for f in files]
    ok = all(r["ok"] for r in results)
    print(json.dumps({"ok": ok, "files": results}, indent=2, sort_keys=True))
    return 0 if ok else ConfigurationError.exit_code


COMMANDS = {"dp": cmd_dp, "td": cmd_td, "eval": cmd_eval, "oracle": cmd_oracle, "recover": cmd_recover}


# ---------------------------------------------------------------- parser


def _common(p, m_default_note=None):
    p.add_argument("--config", help="JSON or YAML run config; flags override it")
    p.add_argument("--env", help="registered environment name")
    p.add_argument("--env-param", action="append", metavar="KEY=VALUE", help="environment builder parameter")
    p.add_argument("--env-config", help="environment config file (JSON or YAML)")
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker threads for per-state work")
    p.add_argument("--out", help="output directory")


def _kernel_flags(p):
    p.add_argument("--m", type=int, help="atoms per state")
    p.add_argument("--sigma", type=float, help="fixed model-kernel bandwidth (default: median heuristic)")
    p.add_argument("--kernel-family", choices=["rational_quadric_mixture", "gaussian"])
    p.add_argument("--kernel-alphas", help="comma-separated mixture exponents")
    p.add_argument("--length-scale", type=float)


def _dp_flags(p):
    p.add_argument("--iters", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--projection", help="barycentric, herding, resample or none")
    p.add_argument("--freeze-after", help="iteration after which atom selection is kept fixed (int, auto, none)")
    p.add_argument("--max-atoms", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="distsm", description="Distributional successor measures for tabular MDPs.")
    parser.add_argument("--version", action="version", version=f"distsm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dp", help="projected dynamic programming")
    _common(p)
    _kernel_flags(p)
    _dp_flags(p)

    p = sub.add_parser("td", help="temporal-difference training")
    _common(p)
    _kernel_flags(p)
    _dp_flags(p)
    p.add_argument("--n-step", type=int)
    p.add_argument("--lr", "--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--polyak-lambda", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--init-scale", type=float)
    p.add_argument("--nstep-sweep", help="n values, e.g. 1..10 or 1,3,5")
    p.add_argument("--reference", help="'dp' to compute a DP reference, or a model CSV")

    p = sub.add_parser("eval", help="zero-shot return distributions, risk and ranking")
    _common(p)
    p.add_argument("--model", action="append", metavar="[NAME=]PATH")
    p.add_argument("--reward", action="append", help="reward name from the environment's bank")
    p.add_argument("--criterion", action="append", help="mean or cvar(alpha)")
    p.add_argument("--x0", help="start state or comma-separated initial distribution")
    p.add_argument("--oracle", action="store_true", help="score against Monte Carlo returns")
    p.add_argument("--n-traj", type=int)
    p.add_argument("--horizon", type=int)

    p = sub.add_parser("oracle", help="Monte Carlo occupancy and return samples")
    _common(p)
    p.add_argument("--x0", help="start state or comma-separated initial distribution")
    p.add_argument("--n-traj", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--reward", action="append")
    p.add_argument("--save-trajectories", action="store_true")

    p = sub.add_parser("recover", help="successor matrix and transition recovery round trip")
    _common(p)

    p = sub.add_parser("validate", help="check artifacts against their schemas")
    p.add_argument("paths", nargs="+")
    return parser


def _emit_error(exc, out=None):
    doc = {"schema": "error", "version": 1, "error": exc.to_dict()}
    text = json.dumps(doc, sort_keys=True, default=str)
    print(text, file=sys.stderr)
    if out is not None and out.is_dir():
        (out / "error.json").write_text(text + "\n")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    out = None
    try:
        if args.command == "validate":
            return cmd_validate(args.paths)
        try:
            cfg = resolve_config(args.command, args)
        except (ValueError, TypeError) as exc:
            if isinstance(exc, DsmError):
                raise
            raise ConfigurationError(str(exc)) from None
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        doc = {"command": args.command, "tool": {"name": "distsm", "version": __version__}}
        doc.update(cfg)
        write_json(out / "config.json", "run_config", doc)
        return COMMANDS[args.command](cfg, out)
    except DsmError as exc:
        _emit_error(exc, out)
        return exc.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
