"""Pilot-bus voltage control: scenarios, B estimation, control law, attack baselines.

Voltage scenarios are LTI with A = C = I: x[t+1] = x[t] + B u[t] + w[t] and
y[t] = x[t] + v[t], driven by u = alpha B^-1 (x0 - x_hat).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .estimation import AttackContext, DetectorConfig, LoopTrace, MitigationStrategy, simulate_loop
from .mdp import ActionSet, GridPolicy
from .seeding import rng_for
from .system_model import NoiseSpec, SteadyStateKalman, SystemModel, solve_riccati

PRESETS = ("ieee9_bus5", "ieee39_pilot10", "ieee118_pilot30")


class IdentifiabilityError(ValueError):
    pass


class TraceFormatError(ValueError):
    pass


class MissingPolicyError(FileNotFoundError):
    pass


# -- scenarios --------------------------------------------------------------------


@dataclass(frozen=True)
class GridScenario:
    name: str
    n_pilot: int
    x0: np.ndarray
    x_init: np.ndarray
    alpha_ctrl: float
    B: np.ndarray
    noise: dict  # {"process_sigma", "measurement_sigma"} in pu
    a_max: float = 0.2
    action_step: float = 0.02

    def __post_init__(self):
        n = int(self.n_pilot)
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        x0 = np.broadcast_to(np.asarray(self.x0, dtype=float), (n,)).copy()
        xi = np.broadcast_to(np.asarray(self.x_init, dtype=float), (n,)).copy()
        if B.shape != (n, n):
            raise ValueError(f"B must be {n}x{n}, got {B.shape}")
        if not 0 < self.alpha_ctrl <= 1:
            raise ValueError("alpha_ctrl must lie in (0, 1]")
        if np.linalg.matrix_rank(B) < n:
            raise ValueError("B is singular")
        for arr in (B, x0, xi):
            arr.setflags(write=False)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "x_init", xi)
        object.__setattr__(self, "_control_gain", self.alpha_ctrl * np.linalg.inv(B))

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.B))

    @property
    def control_gain(self) -> np.ndarray:
        return self._control_gain

    def model(self) -> SystemModel:
        n = self.n_pilot
        eye = np.eye(n)
        q = self.noise["process_sigma"] ** 2
        r = self.noise["measurement_sigma"] ** 2
        return SystemModel(eye, self.B, eye, q * eye, r * eye)

    def actions(self) -> ActionSet:
        if self.n_pilot == 1:
            return ActionSet.scalar_levels(self.a_max, self.action_step)
        k = int(round(self.a_max / self.action_step))
        return ActionSet.uniform(np.round(np.arange(k + 1) * self.action_step, 12), self.n_pilot)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_pilot": self.n_pilot,
            "x0": self.x0.tolist(),
            "x_init": self.x_init.tolist(),
            "alpha_ctrl": self.alpha_ctrl,
            "B": self.B.tolist(),
            "noise": dict(self.noise),
            "a_max": self.a_max,
            "action_step": self.action_step,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GridScenario":
        known = {"name", "n_pilot", "x0", "x_init", "alpha_ctrl", "B", "noise", "a_max", "action_step"}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown scenario keys: {sorted(extra)}")
        return cls(**{k: data[k] for k in known if k in data})


def load_scenario(name_or_path) -> GridScenario:
    """Load a bundled preset by name or a scenario JSON file by path."""
    if str(name_or_path) in PRESETS:
        text = resources.files("cpcs_attack.scenarios").joinpath(f"{name_or_path}.json").read_text()
    else:
        text = Path(name_or_path).read_text()
    return GridScenario.from_dict(json.loads(text))


def synthetic_B(n: int, rng: np.random.Generator, max_cond: float = 50.0) -> np.ndarray:
    """Diagonally dominant control matrix with condition number below ``max_cond``."""
    while True:
        off = rng.uniform(-0.1, 0.1, (n, n))
        np.fill_diagonal(off, 0.0)
        diag = rng.uniform(0.8, 1.2, n) + np.abs(off).sum(axis=1)
        B = off + np.diag(diag)
        if np.linalg.cond(B) < max_cond:
            return B


# -- traces and B estimation -------------------------------------------------------


@dataclass
class TraceDataset:
    x_before: np.ndarray  # (N, n)
    x_after: np.ndarray
    u: np.ndarray  # (N, p)

    def __post_init__(self):
        self.x_before = np.atleast_2d(np.asarray(self.x_before, dtype=float))
        self.x_after = np.atleast_2d(np.asarray(self.x_after, dtype=float))
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        if self.x_before.shape != self.x_after.shape or self.u.shape[0] != self.x_before.shape[0]:
            raise ValueError("trace arrays disagree in record count or state dimension")
        if not (np.all(np.isfinite(self.x_before)) and np.all(np.isfinite(self.x_after)) and np.all(np.isfinite(self.u))):
            raise ValueError("traces contain non-finite entries")

    @property
    def records(self) -> int:
        return self.u.shape[0]

    @classmethod
    def from_csv(cls, path) -> "TraceDataset":
        with open(path, newline="") as fh:
            rows = [(k + 1, r) for k, r in enumerate(csv.reader(fh)) if r and not r[0].startswith("#")]
        if not rows:
            raise TraceFormatError(f"{path}: empty trace file")
        line, header = rows[0]
        xb = [j for j, h in enumerate(header) if h.startswith("x_before_")]
        xa = [j for j, h in enumerate(header) if h.startswith("x_after_")]
        uu = [j for j, h in enumerate(header) if h.startswith("u_")]
        if not xb or len(xb) != len(xa) or not uu or len(xb) + len(xa) + len(uu) != len(header):
            raise TraceFormatError(f"{path}:{line}: header must be x_before_1..n, x_after_1..n, u_1..p")
        data = []
        for line, row in rows[1:]:
            if len(row) != len(header):
                raise TraceFormatError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            try:
                data.append([float(x) for x in row])
            except ValueError as exc:
                raise TraceFormatError(f"{path}:{line}: {exc}") from None
        arr = np.array(data, dtype=float).reshape(-1, len(header))
        return cls(arr[:, xb], arr[:, xa], arr[:, uu])

    def to_csv(self, path, header_lines=()) -> None:
        n, p = self.x_before.shape[1], self.u.shape[1]
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow([f"x_before_{k + 1}" for k in range(n)] + [f"x_after_{k + 1}" for k in range(n)] + [f"u_{k + 1}" for k in range(p)])
            for xb, xa, u in zip(self.x_before, self.x_after, self.u):
                w.writerow([repr(float(v)) for v in (*xb, *xa, *u)])


def synthesize_traces(B, records: int, process_sigma: float, rng: np.random.Generator, u_scale: float = 0.1) -> TraceDataset:
    """Random control probes applied to x[t+1] = x[t] + B u[t] + w[t]."""
    B = np.atleast_2d(B)
    n, p = B.shape
    x = np.empty((records, n))
    x[0] = 1.0
    u = rng.uniform(-u_scale, u_scale, (records, p))
    w = process_sigma * rng.standard_normal((records, n))
    after = np.empty_like(x)
    for k in range(records):
        after[k] = x[k] + B @ u[k] + w[k]
        if k + 1 < records:
            x[k + 1] = after[k]
    return TraceDataset(x, after, u)


@dataclass
class FitReport:
    residual_rms: float
    condition_number: float
    records: int
    rank: int


def estimate_B(traces: TraceDataset) -> tuple[np.ndarray, FitReport]:
    """Least-squares fit of x_after - x_before = B u."""
    n = traces.x_before.shape[1]
    p = traces.u.shape[1]
    if traces.records < n * p:
        raise IdentifiabilityError(f"{traces.records} records cannot identify an {n}x{p} B (need >= {n * p})")
    U = traces.u
    rank = int(np.linalg.matrix_rank(U))
    if rank < p:
        raise IdentifiabilityError(f"control inputs span rank {rank} < p = {p}")
    dX = traces.x_after - traces.x_before
    sol, _, _, sv = np.linalg.lstsq(U, dX, rcond=None)
    B = sol.T
    resid = dX - U @ sol
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    return B, FitReport(float(np.sqrt(np.mean(resid**2))), cond, traces.records, rank)


# -- control and attacks ---------------------------------------------------------------


def control_law(x_hat, scenario: GridScenario) -> np.ndarray:
    """u = alpha B^-1 (x0 - x_hat), batched over leading dimensions."""
    return (scenario.x0 - np.asarray(x_hat, dtype=float)) @ scenario.control_gain.T


ATTACK_KINDS = ("none", "ramp", "surge", "random", "policy")


@dataclass
class AttackSequenceSpec:
    kind: str = "none"
    slope: float = 0.01
    magnitude: float = 0.0
    start: int = 0
    bound: float = 0.2
    policy: object = None  # GridPolicy / learned approximator, or a path to a policy artefact
    mask: np.ndarray | None = None  # boolean per sensor
    a_max: float = np.inf
    norm_ord: float = 2
    attacker_view: str = "estimate"  # "estimate": x_hat_a - x_hat; "oracle": x - x_hat
    _resolved: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.attacker_view not in ("estimate", "oracle"):
            raise ValueError("attacker_view must be 'estimate' or 'oracle'")

    def resolve_policy(self):
        if self._resolved is None:
            if self.policy is None:
                raise MissingPolicyError("policy attack needs a policy artefact")
            if isinstance(self.policy, (str, Path)):
                from .rl.serialize import load_policy

                path = Path(self.policy)
                if not path.exists():
                    raise MissingPolicyError(f"policy artefact {path} not found")
                self._resolved = load_policy(path)
            else:
                self._resolved = self.policy
        return self._resolved


def _clip_norm(a: np.ndarray, a_max: float, ord_: float) -> np.ndarray:
    if not np.isfinite(a_max):
        return a
    norms = np.linalg.norm(a, ord=ord_, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > a_max, a_max / norms, 1.0)
    return a * scale


def generate_attack(spec: AttackSequenceSpec, t: int, state_info: AttackContext, m: int | None = None) -> np.ndarray:
    """Injection a[t] for every run in ``state_info`` (shape (runs, m))."""
    runs, n = state_info.x.shape
    m = n if m is None else m
    mask = np.ones(m) if spec.mask is None else np.asarray(spec.mask, dtype=float)
    kind = spec.kind
    if kind == "none":
        a = np.zeros((runs, m))
    elif kind == "ramp":
        a = np.full((runs, m), spec.slope * t)
    elif kind == "surge":
        a = np.full((runs, m), spec.magnitude if t >= spec.start else 0.0)
    elif kind == "random":
        a = state_info.rng.uniform(-spec.bound, spec.bound, (runs, m))
    else:
        pol = spec.resolve_policy()
        e = state_info.estimated_error if spec.attacker_view == "estimate" else state_info.error
        vectors = pol.actions.vectors if hasattr(pol, "actions") else None
        idx = pol.act(e, t - 1)
        if vectors is None:
            raise MissingPolicyError("policy artefact carries no action set")
        a = vectors[np.asarray(idx, dtype=np.int64).reshape(runs)]
    return _clip_norm(a * mask, spec.a_max, spec.norm_ord)


# -- closed loop ----------------------------------------------------------------------


@dataclass
class ClosedLoopResult:
    trace: LoopTrace
    summary: dict
    ssk: SteadyStateKalman


def closed_loop_simulate(
    scenario: GridScenario,
    attack_spec: AttackSequenceSpec,
    cfg: DetectorConfig | float,
    mitigation: MitigationStrategy,
    horizon: int,
    runs: int,
    seed: int,
    measurement_noise: str = "gaussian",
    process_noise: str = "gaussian",
    dof: float = 4.0,
    attacker_innovation: str = "own",
) -> ClosedLoopResult:
    """Monte Carlo of the voltage loop under ``attack_spec``.

    ``cfg`` may be a DetectorConfig or a bare threshold eta. The summary holds
    per-step mean state, mean estimate, empirical detection probability and
    mean deviation of the state and of the estimate from the setpoint.
    """
    model = scenario.model()
    ssk = solve_riccati(model)
    det = cfg if isinstance(cfg, DetectorConfig) else DetectorConfig.from_kalman(float(cfg), ssk)
    rng = rng_for(seed, 0, "closed_loop")
    pn = NoiseSpec(process_noise, model.Q, dof)
    mn = NoiseSpec(measurement_noise, model.R, dof)
    if not np.isfinite(attack_spec.a_max):
        attack_spec = replace(attack_spec, a_max=scenario.a_max)
    attack = lambda ctx: generate_attack(attack_spec, ctx.t, ctx, model.m)  # noqa: E731
    control = lambda xh: control_law(xh, scenario)  # noqa: E731
    tr = simulate_loop(
        model, ssk, det, mitigation, horizon, runs, rng,
        attack=attack, control=control, x_init=scenario.x_init, x_hat_init=scenario.x_init,
        process_noise=pn, measurement_noise=mn, attacker_innovation=attacker_innovation,
    )
    summary = {
        "mean_x": tr.x.mean(axis=0),
        "mean_x_hat": tr.x_hat.mean(axis=0),
        "detection": tr.i.mean(axis=0),
        "x_deviation": np.abs(tr.x - scenario.x0).mean(axis=(0, 2)),
        "x_hat_deviation": np.abs(tr.x_hat - scenario.x0).mean(axis=(0, 2)),
        "cumulative_error": np.sum(tr.error[:, 1:] ** 2, axis=(1, 2)),
    }
    return ClosedLoopResult(tr, summary, ssk)


def grid_policy_attack(policy: GridPolicy, **kw) -> AttackSequenceSpec:
    return AttackSequenceSpec(kind="policy", policy=policy, **kw)
