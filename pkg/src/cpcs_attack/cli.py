"""Command-line harness: config-driven experiments with deterministic outputs.

Every CSV starts with ``# config_sha256=<hash of the resolved config>``.
Timestamps go only to ``run.log`` so the data files are byte-reproducible.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np
from scipy.stats import chi2

from .estimation import DetectorConfig, MitigationStrategy, write_trajectory_csv
from .fpmd import cumulative_error, fp_cost, md_cost, md_cost_optimal, monte_carlo_error
from .mdp import ActionSet, ErrorGrid, GridPolicy, build_grid, build_kernel, default_bounds, value_iteration
from .rl import ErrorDynamicsEnv, FsrEncoder, RlConfig, evaluate_policy, q_learning_train, qlfa_train
from .rl.neural import NetSpec, qnlfa_train
from .rl.serialize import LearnedPolicy, save_policy
from .rl.tabular import DivergenceError
from .seeding import rng_for
from .system_model import SystemModel, solve_riccati, validate_model
from .voltage import (
    AttackSequenceSpec,
    GridScenario,
    closed_loop_simulate,
    estimate_B,
    load_scenario,
    TraceDataset,
)

log = logging.getLogger("cpcs_attack")

_num = {"type": "number"}
_int = {"type": "integer"}
_matrix = {"type": "array", "items": {"type": "array", "items": _num}}

ATTACK_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "kind": {"enum": ["none", "ramp", "surge", "random", "policy"]},
        "slope": _num,
        "magnitude": _num,
        "start": _int,
        "bound": _num,
        "policy": {"type": "string"},
        "mask": {"type": "array", "items": {"type": "boolean"}},
        "attacker_view": {"enum": ["estimate", "oracle"]},
    },
    "required": ["kind"],
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "scenario": {"type": "string"},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: _matrix for k in ("A", "B", "C", "Q", "R", "X0")},
            "required": ["A", "B", "C", "Q", "R"],
        },
        "detector": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"eta": {"type": ["number", "string"]}, "false_alarm": _num},
        },
        "mitigation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"kind": {"enum": ["perfect", "noisy", "model_only"]}, "sigma_mit": {"type": "number", "minimum": 0}},
        },
        "actions": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"a_max": {"type": "number", "minimum": 0}, "step": {"type": "number", "exclusiveMinimum": 0}},
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "d": {"type": "integer", "minimum": 1},
                "bounds": _matrix,
                "anchor": {"enum": ["edges", "centers"]},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["value_iteration", "q_tabular", "qlfa", "qnlfa"]},
                "mode": {"enum": ["finite", "discounted"]},
                "horizon": {"type": "integer", "minimum": 1},
                "gamma": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "kernel_method": {"enum": ["auto", "analytic_scalar", "monte_carlo"]},
                "kernel_samples": {"type": "integer", "minimum": 1},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "episodes": {"type": "integer", "minimum": 0},
                "eps_start": _num,
                "eps_end": _num,
                "eps_decay_frac": _num,
                "exploring_starts": {"type": "boolean"},
                "eval_every": {"type": "integer", "minimum": 0},
                "eval_runs": {"type": "integer", "minimum": 1},
                "eval_horizon": {"type": "integer", "minimum": 1},
                "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "batch": {"type": "integer", "minimum": 1},
                "replay": {"type": "integer", "minimum": 1},
                "target_every": {"type": "integer", "minimum": 1},
            },
        },
        "attack": ATTACK_SCHEMA,
        "compare": {"type": "array", "items": ATTACK_SCHEMA},
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "process": {"enum": ["gaussian", "logistic", "student_t"]},
                "measurement": {"enum": ["gaussian", "logistic", "student_t"]},
                "dof": {"type": "number", "exclusiveMinimum": 2},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eta": {"type": "array", "items": _num},
                "sigma_mit": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "horizon": {"type": "integer", "minimum": 1},
                "attack": {"oneOf": [{"enum": ["optimal"]}, {"type": "array", "items": _num}, _num]},
                "mc_runs": {"type": "integer", "minimum": 0},
            },
        },
        "traces": {"type": "string"},
        "horizon": {"type": "integer", "minimum": 1},
        "runs": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "write_trajectories": {"type": "boolean"},
    },
}

DEFAULTS = {
    "detector": {"eta": 5.0},
    "mitigation": {"kind": "perfect", "sigma_mit": 0.0},
    "grid": {"d": 41, "anchor": "edges"},
    "solver": {
        "kind": "value_iteration", "mode": "finite", "horizon": 30, "gamma": 0.95, "tol": 1e-6,
        "kernel_method": "auto", "kernel_samples": 10_000, "alpha": 0.3, "episodes": 2000,
        "eps_start": 1.0, "eps_end": 0.05, "eps_decay_frac": 0.5, "exploring_starts": False,
        "eval_every": 0, "eval_runs": 500, "eval_horizon": 50,
        "hidden": [20, 20, 20, 20, 20], "lr": 1e-3, "batch": 200, "replay": 50_000, "target_every": 500,
    },
    "attack": {"kind": "none"},
    "noise": {"process": "gaussian", "measurement": "gaussian", "dof": 4.0},
    "sweep": {"eta": [0, 5, 10, 15], "sigma_mit": [0, 5, 10, 15], "horizon": 20, "attack": 10.0, "mc_runs": 0},
    "horizon": 30,
    "runs": 100,
    "seed": 0,
    "output_dir": "out",
    "write_trajectories": True,
}


class ConfigError(ValueError):
    pass


# -- config --------------------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(raw: dict, seed: int | None = None, out: str | None = None) -> dict:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    if "scenario" in raw and "model" in raw:
        raise ConfigError("give either 'scenario' or 'model', not both")
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["output_dir"] = str(out)
    return cfg


def config_hash(cfg: dict) -> str:
    """Hash of everything that can change results (the output location cannot)."""
    body = {k: v for k, v in cfg.items() if k != "output_dir"}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


class Experiment:
    """Resolved objects for one config."""

    def __init__(self, cfg: dict, kernel_cache=None):
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.kernel_cache = kernel_cache
        self.scenario: GridScenario | None = None
        if "model" in cfg:
            self.model = SystemModel.from_dict(cfg["model"])
        else:
            self.scenario = load_scenario(cfg.get("scenario", "ieee9_bus5"))
            self.model = self.scenario.model()
        validate_model(self.model).raise_for_failures()
        self.ssk = solve_riccati(self.model)
        det = cfg["detector"]
        if "false_alarm" in det:
            eta = float(chi2.isf(det["false_alarm"], self.model.m))
        else:
            eta = float(det.get("eta", 5.0))
        self.detector = DetectorConfig.from_kalman(eta, self.ssk)
        self.mitigation = MitigationStrategy(cfg["mitigation"]["kind"], float(cfg["mitigation"].get("sigma_mit", 0.0)))
        self.actions = self._actions()
        self.out = Path(cfg["output_dir"])

    def _actions(self) -> ActionSet:
        spec = self.cfg.get("actions", {})
        if self.scenario is not None and not spec:
            return self.scenario.actions()
        a_max = float(spec.get("a_max", self.scenario.a_max if self.scenario else 1.0))
        step = float(spec.get("step", self.scenario.action_step if self.scenario else a_max / 10))
        if self.model.m == 1:
            return ActionSet.scalar_levels(a_max, step)
        k = int(round(a_max / step))
        return ActionSet.uniform(np.round(np.arange(k + 1) * step, 12), self.model.m)

    def grid(self, cap: bool = True) -> ErrorGrid:
        g = self.cfg["grid"]
        bounds = np.asarray(g["bounds"], dtype=float) if "bounds" in g else default_bounds(self.ssk, self.actions.a_max, mitigation_sd=self.mitigation.sigma_mit)
        if bounds.shape[0] == 1 and self.model.n > 1:
            bounds = np.repeat(bounds, self.model.n, axis=0)
        if cap:
            return build_grid(bounds, g["d"], g.get("anchor", "edges"))
        return ErrorGrid(bounds[:, 0], bounds[:, 1], g["d"], g.get("anchor", "edges"))

    def header(self) -> list[str]:
        return [f"config_sha256={self.hash}"]

    def rl_config(self) -> RlConfig:
        s = self.cfg["solver"]
        return RlConfig(
            alpha=s["alpha"], gamma=s["gamma"], eps_start=s["eps_start"], eps_end=s["eps_end"],
            eps_decay_frac=s["eps_decay_frac"], episodes=s["episodes"], horizon=s["eval_horizon"],
            seed=self.cfg["seed"], exploring_starts=s["exploring_starts"],
        )

    def env(self) -> ErrorDynamicsEnv:
        return ErrorDynamicsEnv(self.model, self.ssk, self.detector, self.mitigation, self.actions, self.cfg["solver"]["eval_horizon"])

    def attack_spec(self, spec: dict) -> AttackSequenceSpec:
        kw = {k: v for k, v in spec.items() if k != "name"}
        if "mask" in kw:
            kw["mask"] = np.asarray(kw["mask"], dtype=bool)
        return AttackSequenceSpec(a_max=self.actions.a_max, norm_ord=self.actions.norm_ord, **kw)


def _csv_writer(path: Path, header: list[str]):
    fh = open(path, "w", newline="")
    for line in header:
        fh.write(f"# {line}\n")
    return fh, csv.writer(fh, lineterminator="\n")


def _fmt(x) -> str:
    return repr(float(x))


# -- commands ----------------------------------------------------------------------------


def cmd_solve_mdp(exp: Experiment) -> dict:
    s = exp.cfg["solver"]
    grid = exp.grid()
    kernel = build_kernel(
        grid, exp.actions, exp.model, exp.ssk, exp.detector, exp.mitigation,
        method=s["kernel_method"], n_samples=s["kernel_samples"], seed=exp.cfg["seed"], cache_dir=exp.kernel_cache,
    )
    sol = value_iteration(kernel, grid, exp.actions, mode=s["mode"], horizon=s["horizon"], gamma=s["gamma"], tol=s["tol"])
    policy = GridPolicy.from_solution(sol, grid, exp.actions)
    exp.out.mkdir(parents=True, exist_ok=True)
    save_policy(exp.out / "policy.json", policy)
    fh, w = _csv_writer(exp.out / "policy.csv", exp.header())
    n, m = exp.model.n, exp.model.m
    w.writerow([f"center_{k + 1}" for k in range(n)] + ["action_index"] + [f"a_{k + 1}" for k in range(m)] + ["value"])
    for c, (center, a_idx) in enumerate(zip(grid.centers, sol.policy)):
        w.writerow([_fmt(x) for x in center] + [int(a_idx)] + [_fmt(x) for x in exp.actions.vectors[a_idx]] + [_fmt(sol.V[c])])
    fh.close()
    return {"cells": grid.D, "kernel_deficit": kernel.raw_deficit, "iterations": sol.iterations}


def _train(exp: Experiment, kind: str, callback=None, every: int = 0):
    env = exp.env()
    rc = exp.rl_config()
    if kind == "q_tabular":
        return q_learning_train(env, exp.grid(), rc, callback, every)
    if kind == "qlfa":
        return qlfa_train(env, FsrEncoder(exp.grid(cap=False)), rc, callback=callback, every=every)
    if kind == "qnlfa":
        s = exp.cfg["solver"]
        hw = exp.grid(cap=False).upper
        spec = NetSpec(
            hidden=tuple(s["hidden"]), lr=s["lr"], batch=s["batch"], replay=s["replay"], target_every=s["target_every"],
            input_scale=tuple(1.0 / np.abs(hw)), reward_scale=float(1.0 / np.sum(hw**2)),
        )
        return qnlfa_train(env, rc, spec, callback=callback, every=every)
    raise ConfigError(f"solver {kind!r} is not a learner")


def cmd_train(exp: Experiment) -> dict:
    s = exp.cfg["solver"]
    kind = s["kind"]
    env = exp.env()
    exp.out.mkdir(parents=True, exist_ok=True)
    rows = []
    eval_seed = exp.cfg["seed"]

    def evaluate(ep, learner):
        res = evaluate_policy(learner, env, s["eval_runs"], rng_for(eval_seed, 0, "eval"), s["eval_horizon"])
        rows.append((ep, ep * s["eval_horizon"], res.time_average, res.time_average_se))

    if kind == "value_iteration":
        info = cmd_solve_mdp(exp)
        from .rl.serialize import load_policy

        pol = load_policy(exp.out / "policy.json")
        if s["episodes"] > 0:
            evaluate(0, pol)
    else:
        every = s["eval_every"] or max(s["episodes"], 1)
        try:
            learner = _train(exp, kind, evaluate, every) if s["episodes"] > 0 else None
        except DivergenceError as exc:
            (exp.out / "divergence.json").write_text(json.dumps({"error": str(exc), **{k: str(v) for k, v in exc.diagnostics.items()}}, indent=1) + "\n")
            raise
        if learner is not None:
            save_policy(exp.out / ("policy.bin" if kind == "qnlfa" else "policy.json"), LearnedPolicy(learner, exp.actions))
        info = {}
    fh, w = _csv_writer(exp.out / "learning_curve.csv", exp.header())
    w.writerow(["episodes", "env_steps", "eval_time_average", "eval_se"])
    for ep, steps, mean, se in rows:
        w.writerow([ep, steps, _fmt(mean), _fmt(se)])
    fh.close()
    return {"points": len(rows), **info}


def _policy_for(exp: Experiment, spec: dict):
    """Attack spec; a policy path relative to the output directory is allowed."""
    spec = dict(spec)
    if spec.get("kind") == "policy" and "policy" in spec:
        p = Path(spec["policy"])
        if not p.is_absolute() and not p.exists() and (exp.out / p).exists():
            spec["policy"] = str(exp.out / p)
    return exp.attack_spec(spec)


def _require_scenario(exp: Experiment) -> GridScenario:
    if exp.scenario is None:
        raise ConfigError("this command needs a voltage 'scenario'")
    return exp.scenario


def cmd_simulate(exp: Experiment) -> dict:
    sc = _require_scenario(exp)
    nz = exp.cfg["noise"]
    res = closed_loop_simulate(
        sc, _policy_for(exp, exp.cfg["attack"]), exp.detector, exp.mitigation, exp.cfg["horizon"], exp.cfg["runs"],
        exp.cfg["seed"], measurement_noise=nz["measurement"], process_noise=nz["process"], dof=nz["dof"],
    )
    exp.out.mkdir(parents=True, exist_ok=True)
    if exp.cfg["write_trajectories"]:
        tdir = exp.out / "trajectories"
        tdir.mkdir(exist_ok=True)
        for r in range(exp.cfg["runs"]):
            write_trajectory_csv(res.trace, r, tdir / f"run_{r:05d}.csv", exp.header())
    _write_summary(exp.out / "summary.csv", exp, res.summary)
    return {"runs": exp.cfg["runs"], "mean_cumulative_error": float(res.summary["cumulative_error"].mean())}


def _write_summary(path: Path, exp: Experiment, summ: dict) -> None:
    n = exp.model.n
    fh, w = _csv_writer(path, exp.header())
    w.writerow(["t"] + [f"mean_x_{k + 1}" for k in range(n)] + [f"mean_xhat_{k + 1}" for k in range(n)] + ["detection", "x_deviation", "xhat_deviation"])
    for t in range(summ["mean_x"].shape[0]):
        w.writerow(
            [t] + [_fmt(v) for v in summ["mean_x"][t]] + [_fmt(v) for v in summ["mean_x_hat"][t]]
            + [_fmt(summ["detection"][t]), _fmt(summ["x_deviation"][t]), _fmt(summ["x_hat_deviation"][t])]
        )
    fh.close()


def cmd_compare_attacks(exp: Experiment) -> dict:
    sc = _require_scenario(exp)
    specs = exp.cfg.get("compare") or [{"kind": "none"}, {"kind": "ramp", "slope": 0.01}, {"kind": "random", "bound": sc.a_max}]
    exp.out.mkdir(parents=True, exist_ok=True)
    fh, w = _csv_writer(exp.out / "compare.csv", exp.header())
    w.writerow(["attack", "mean_cumulative_error", "se", "final_x_deviation", "final_xhat_deviation"])
    det_rows = {}
    T = exp.cfg["horizon"]
    for k, spec in enumerate(specs):
        name = spec.get("name", f"{spec['kind']}_{k}")
        res = closed_loop_simulate(sc, _policy_for(exp, spec), exp.detector, exp.mitigation, T, exp.cfg["runs"], exp.cfg["seed"])
        ce = res.summary["cumulative_error"]
        se = ce.std(ddof=1) / np.sqrt(ce.size) if ce.size > 1 else 0.0
        w.writerow([name, _fmt(ce.mean()), _fmt(se), _fmt(res.summary["x_deviation"][-1]), _fmt(res.summary["x_hat_deviation"][-1])])
        det_rows[name] = res.summary["detection"]
    fh.close()
    fh, w = _csv_writer(exp.out / "detection.csv", exp.header())
    w.writerow(["t", *det_rows])
    for t in range(T + 1):
        w.writerow([t] + [_fmt(det_rows[k][t]) for k in det_rows])
    fh.close()
    return {"attacks": len(specs)}


def _sweep_cell(args):
    model_d, eta, sigma, horizon, attack, mc_runs, seed, idx = args
    model = SystemModel.from_dict(model_d)
    ssk = solve_riccati(model)
    mit = MitigationStrategy("noisy", sigma)
    cfg = DetectorConfig.from_kalman(eta, ssk)
    if model.n == 1 and model.m == 1:
        fp = fp_cost(eta, sigma, model, ssk, horizon)
        if attack == "optimal":
            md = md_cost_optimal(eta, sigma, model, ssk, horizon).md_cost
            seq = None
        else:
            seq = np.resize(np.asarray(attack, dtype=float), horizon)
            md = md_cost(eta, sigma, seq, model, ssk, horizon)
        zero = cumulative_error(np.zeros(horizon), model, ssk, cfg, mit)
        pruned = zero.pruned_mass
        relerr = ""
        if mc_runs > 0:
            mc, _ = monte_carlo_error(np.zeros(horizon), model, ssk, cfg, mit, mc_runs, rng_for(seed, idx, "sweep_mc"))
            relerr = _fmt(np.max(np.abs(zero.per_step - mc) / mc))
        return [_fmt(eta), _fmt(sigma), _fmt(fp), _fmt(md), _fmt(pruned), relerr], "analytic"
    # multivariate: Monte Carlo only
    runs = max(mc_runs, 1000)
    rng = rng_for(seed, idx, "sweep_mc")
    zero = np.zeros(horizon)
    sys_fp, _ = monte_carlo_error(zero, model, ssk, cfg, mit, runs, rng)
    ref = np.trace(ssk.P_e) * horizon
    seq = np.resize(np.asarray(10.0 if attack == "optimal" else attack, dtype=float), horizon)
    sys_md, _ = monte_carlo_error(seq, model, ssk, cfg, mit, runs, rng)
    ref_md, _ = monte_carlo_error(seq, model, ssk, DetectorConfig(0.0, ssk.P_r), mit, runs, rng)
    return [_fmt(eta), _fmt(sigma), _fmt(sys_fp.sum() - ref), _fmt(sys_md.sum() - ref_md.sum()), "", ""], "monte_carlo"


def cmd_fp_md_sweep(exp: Experiment, workers: int = 1) -> dict:
    sw = exp.cfg["sweep"]
    cells = [(e, s) for e in sw["eta"] for s in sw["sigma_mit"]]
    jobs = [
        (exp.model.to_dict(), float(e), float(s), sw["horizon"], sw["attack"], sw["mc_runs"], exp.cfg["seed"], k)
        for k, (e, s) in enumerate(cells)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    exp.out.mkdir(parents=True, exist_ok=True)
    header = exp.header()
    if results and results[0][1] == "monte_carlo":
        header = header + ["method=monte_carlo (analytic recursion needs n = m = 1; analytic columns omitted)"]
    fh, w = _csv_writer(exp.out / "sweep.csv", header)
    w.writerow(["eta", "sigma_mit", "fp_cost", "md_cost", "pruned_mass", "mc_crosscheck_relerr"])
    for row, _ in results:
        w.writerow(row)
    fh.close()
    return {"cells": len(cells)}


def cmd_estimate_b(exp: Experiment, trace_path: str | None = None) -> dict:
    path = trace_path or exp.cfg.get("traces")
    if not path:
        raise ConfigError("estimate-b needs --traces or a 'traces' config entry")
    B, report = estimate_B(TraceDataset.from_csv(path))
    exp.out.mkdir(parents=True, exist_ok=True)
    payload = {
        "config_sha256": exp.hash,
        "B": B.tolist(),
        "report": {
            "residual_rms": report.residual_rms,
            "condition_number": report.condition_number,
            "records": report.records,
            "rank": report.rank,
        },
    }
    (exp.out / "B.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return payload["report"]


COMMANDS = ("solve-mdp", "train", "simulate", "fp-md-sweep", "estimate-b", "compare-attacks")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpcs-attack", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--workers", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("--kernel-cache", help="directory for cached transition kernels")
    p.add_argument("--traces", help="trace CSV for estimate-b")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = json.loads(Path(args.config).read_text()) if args.config else {}
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    if args.command == "estimate-b" and "model" not in raw and "scenario" not in raw:
        raw = {**raw, "scenario": "ieee9_bus5"}
    try:
        cfg = resolve_config(raw, args.seed, args.out)
        exp = Experiment(cfg, args.kernel_cache)
        started = time.time()
        if args.command == "solve-mdp":
            info = cmd_solve_mdp(exp)
        elif args.command == "train":
            info = cmd_train(exp)
        elif args.command == "simulate":
            info = cmd_simulate(exp)
        elif args.command == "fp-md-sweep":
            info = cmd_fp_md_sweep(exp, args.workers)
        elif args.command == "estimate-b":
            info = cmd_estimate_b(exp, args.traces)
        else:
            info = cmd_compare_attacks(exp)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    exp.out.mkdir(parents=True, exist_ok=True)
    with open(exp.out / "run.log", "a") as fh:
        fh.write(json.dumps({"time": time.strftime("%Y-%m-%dT%H:%M:%S"), "command": args.command,
                             "elapsed_s": round(time.time() - started, 3), "config_sha256": exp.hash,
                             "info": {k: (v if isinstance(v, (int, float, str)) else str(v)) for k, v in info.items()}}) + "\n")
    print(json.dumps({"command": args.command, "out": str(exp.out), **{k: v for k, v in info.items() if isinstance(v, (int, float, str))}}))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
