"""Discretised attack MDP over Kalman estimation-error states.

States are grid cells of the error e[t]; actions are admissible injections
a[t+1]. The transition kernel maps the error recursion, chi-square detection
and reactive mitigation into cell-to-cell probabilities. For scalar systems
the kernel is exact (bivariate Gaussian rectangle masses of the residual and
next error); otherwise it is estimated by Monte Carlo.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .estimation import DetectorConfig, MitigationStrategy, detect, error_step
from .gaussian import bvn_cdf
from .system_model import SteadyStateKalman, SystemModel, gaussian, sample_noise

log = logging.getLogger(__name__)

MAX_CELLS = 10**6


class GridTooLargeError(ValueError):
    pass


class KernelError(ValueError):
    pass


# -- state grid -----------------------------------------------------------------


@dataclass(frozen=True)
class ErrorGrid:
    """Uniform box grid with ``d`` levels per dimension.

    ``anchor="edges"``: ``lower``/``upper`` are the outer cell edges and the
    centres sit mid-cell. ``anchor="centers"``: they are the first and last
    centres. States outside the box belong to the nearest boundary cell.
    """

    lower: np.ndarray
    upper: np.ndarray
    d: int
    anchor: str = "edges"

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if self.anchor not in ("edges", "centers"):
            raise ValueError(f"unknown anchor {self.anchor!r}")
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds differ in length")
        if self.d < 1 or (self.anchor == "centers" and self.d < 2):
            raise ValueError("need at least 1 level per dimension (2 when anchored at centres)")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo < hi)):
            raise ValueError("bounds must be finite with lower < upper")
        # C-order strides (last dimension fastest), cached for fast lookups
        object.__setattr__(self, "_strides", self.d ** np.arange(lo.size - 1, -1, -1, dtype=np.int64))
        width = (hi - lo) / (self.d if self.anchor == "edges" else self.d - 1)
        object.__setattr__(self, "_width", width)
        object.__setattr__(self, "_box_lower", lo if self.anchor == "edges" else lo - width / 2)

    @property
    def n(self) -> int:
        return self.lower.size

    @property
    def D(self) -> int:
        return self.d**self.n

    @property
    def width(self) -> np.ndarray:
        return self._width

    @property
    def box_lower(self) -> np.ndarray:
        return self._box_lower

    def centers_1d(self, k: int = 0) -> np.ndarray:
        return self.box_lower[k] + self.width[k] * (np.arange(self.d) + 0.5)

    def interior_edges(self, k: int = 0) -> np.ndarray:
        return self.box_lower[k] + self.width[k] * np.arange(1, self.d)

    def cell_edges(self, k: int = 0) -> np.ndarray:
        """Edges with the outer ones at +-inf (clamping semantics)."""
        return np.concatenate(([-np.inf], self.interior_edges(k), [np.inf]))

    @property
    def centers(self) -> np.ndarray:
        """(D, n) centres in C order (last dimension fastest)."""
        axes = [self.centers_1d(k) for k in range(self.n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def dim_indices(self, state) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        idx = np.floor((state - self._box_lower) / self._width)
        return np.minimum(np.maximum(idx, 0), self.d - 1).astype(np.int64)

    def cell_index(self, state):
        """Flat cell index of ``state`` (``(..., n)``), clamped into the box."""
        state = np.asarray(state, dtype=float)
        if state.ndim == 0:
            state = state[None]
        idx = self.dim_indices(state)
        flat = idx @ self._strides
        return int(flat) if flat.ndim == 0 else flat

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist(), "d": self.d, "anchor": self.anchor}

    @classmethod
    def from_dict(cls, data: dict) -> "ErrorGrid":
        return cls(np.array(data["lower"]), np.array(data["upper"]), int(data["d"]), data.get("anchor", "edges"))


def build_grid(bounds, d: int, anchor: str = "edges", max_cells: int = MAX_CELLS) -> ErrorGrid:
    """Grid over ``bounds`` (one ``(lo, hi)`` pair per dimension)."""
    b = np.asarray(bounds, dtype=float)
    if b.ndim == 1:
        b = b[None, :]
    n = b.shape[0]
    if float(d) ** n > max_cells:
        raise GridTooLargeError(
            f"{d}^{n} = {float(d) ** n:.3g} cells exceeds the cap of {max_cells}; "
            "use the Q-learning solvers in cpcs_attack.rl for high-dimensional systems"
        )
    return ErrorGrid(b[:, 0], b[:, 1], int(d), anchor)


def default_bounds(ssk: SteadyStateKalman, a_max: float, sigmas: float = 6.0, mitigation_sd: float = 0.0) -> np.ndarray:
    """Symmetric box: +-(sigmas * error sd + largest attack-driven offset).

    The offset is ||K|| a_max / (1 - rho(A_K)), the steady-state displacement a
    persistent undetected attack of size a_max can produce. The error sd is
    sqrt(diag P_e), widened by the stationary spread that mitigation noise of
    std ``mitigation_sd`` injects if an alarm fires at every step.
    """
    rho = max(abs(np.linalg.eigvals(ssk.A_K)))
    gap = max(1.0 - rho, 1e-6)
    drift = np.linalg.norm(ssk.K, 2) * a_max / gap
    var = np.diag(ssk.P_e) + mitigation_sd**2 * np.diag(ssk.K @ ssk.K.T) / max(1.0 - rho**2, 1e-6)
    half = sigmas * np.sqrt(var) + drift
    return np.stack([-half, half], axis=-1)


# -- actions ------------------------------------------------------------------------


@dataclass(frozen=True)
class ActionSet:
    vectors: np.ndarray  # (A, m)
    a_max: float
    norm_ord: float = 2

    def __post_init__(self):
        vec = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        object.__setattr__(self, "vectors", vec)
        norms = np.linalg.norm(vec, ord=self.norm_ord, axis=1)
        bad = np.flatnonzero(norms > self.a_max * (1 + 1e-12) + 1e-15)
        if bad.size:
            raise ValueError(f"actions {bad.tolist()} exceed a_max = {self.a_max}")
        if not np.any(np.all(vec == 0.0, axis=1)):
            raise ValueError("action set must contain the zero action")

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def m(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def scalar_levels(cls, a_max: float, step: float) -> "ActionSet":
        k = int(round(a_max / step))
        levels = np.round(np.arange(k + 1) * step, 12)
        return cls(levels[:, None], a_max, 2)

    @classmethod
    def uniform(cls, levels, m: int, norm_ord: float = np.inf) -> "ActionSet":
        """Same magnitude injected on every sensor: a = c * ones(m)."""
        levels = np.asarray(levels, dtype=float)
        vec = levels[:, None] * np.ones((1, m))
        a_max = float(np.max(np.linalg.norm(vec, ord=norm_ord, axis=1)))
        return cls(vec, a_max, norm_ord)

    def to_dict(self) -> dict:
        ord_ = "inf" if np.isinf(self.norm_ord) else self.norm_ord
        return {"vectors": self.vectors.tolist(), "a_max": self.a_max, "norm_ord": ord_}

    @classmethod
    def from_dict(cls, data: dict) -> "ActionSet":
        ord_ = np.inf if data.get("norm_ord", 2) == "inf" else float(data.get("norm_ord", 2))
        return cls(np.array(data["vectors"]), float(data["a_max"]), ord_)


# -- transition kernel ----------------------------------------------------------------


@dataclass
class TransitionKernel:
    T: np.ndarray  # (D, A, D)
    method: str
    n_samples: int = 0
    raw_deficit: float = 0.0

    @property
    def D(self) -> int:
        return self.T.shape[0]

    @property
    def A(self) -> int:
        return self.T.shape[1]


@dataclass(frozen=True)
class _Branch:
    mean_x: np.ndarray
    var_x: float
    cov_xr: float


def _scalar_terms(model: SystemModel, ssk: SteadyStateKalman):
    f = lambda M: float(np.asarray(M).ravel()[0])  # noqa: E731
    return {
        "A": f(model.A), "C": f(model.C), "Q": f(model.Q), "R": f(model.R),
        "K": f(ssk.K), "A_K": f(ssk.A_K), "W_K": f(ssk.W_K),
    }


def _scalar_branches(e, a, model, ssk, delta_mean, delta_var, model_only=False):
    """Residual law and per-branch law of the next error for scalar systems.

    Returns (mean_r, var_r, no_alarm_branch, alarm_branch). ``delta_mean`` is
    the mean of the mitigation signal (the attack itself for perfect / noisy
    mitigation) and ``delta_var`` its variance.
    """
    s = _scalar_terms(model, ssk)
    e = np.asarray(e, dtype=float)
    a = np.asarray(a, dtype=float)
    mean_r = s["C"] * s["A"] * e + a
    var_r = s["C"] ** 2 * s["Q"] + s["R"]
    var_x = s["W_K"] ** 2 * s["Q"] + s["K"] ** 2 * s["R"]
    cov = s["W_K"] * s["Q"] * s["C"] - s["K"] * s["R"]
    quiet = _Branch(s["A_K"] * e - s["K"] * a, var_x, cov)
    if model_only:
        alarm = _Branch(s["A"] * e + 0.0 * a, s["Q"], s["Q"] * s["C"])
    else:
        resid = a - np.asarray(delta_mean, dtype=float)
        alarm = _Branch(s["A_K"] * e - s["K"] * resid, var_x + s["K"] ** 2 * delta_var, cov)
    return mean_r, var_r, quiet, alarm


def _branch_cdf(edges, mean_r, sd_r, tau, br: _Branch, alarm: bool):
    """P(branch, e' <= edge) for each edge (broadcast against mean arrays)."""
    sd_x = np.sqrt(br.var_x)
    if sd_x <= 0 or sd_r <= 0:
        raise KernelError("analytic kernel needs non-degenerate noise; use method='monte_carlo'")
    rho = br.cov_xr / (sd_x * sd_r)
    rho = float(np.clip(rho, -1 + 1e-12, 1 - 1e-12))
    z = (edges - br.mean_x[..., None]) / sd_x
    hi = ((tau - mean_r) / sd_r)[..., None]
    lo = ((-tau - mean_r) / sd_r)[..., None]
    inside = bvn_cdf(hi, z, rho) - bvn_cdf(lo, z, rho)
    inside = np.maximum(inside, 0.0)
    if not alarm:
        return inside
    return np.maximum(ndtr(z) - inside, 0.0)


def transition_prob_scalar(
    e: float,
    a: float,
    cell,
    model: SystemModel,
    ssk: SteadyStateKalman,
    cfg: DetectorConfig,
    delta_mean: float | None = None,
    delta_var: float = 0.0,
    model_only: bool = False,
    branch: str = "both",
) -> float:
    """P(e[t+1] in cell | e[t] = e, a[t+1] = a) summed over alarm / no-alarm.

    ``delta_mean`` defaults to ``a`` (mitigation centred on the attack).
    ``branch`` restricts the sum to ``"quiet"`` or ``"alarm"``.
    """
    if model.n != 1 or model.m != 1:
        raise KernelError("transition_prob_scalar needs n = m = 1")
    delta_mean = a if delta_mean is None else delta_mean
    mean_r, var_r, quiet, alarm = _scalar_branches(e, a, model, ssk, delta_mean, delta_var, model_only)
    tau = cfg.scalar_band()
    edges = np.array([cell[0], cell[1]], dtype=float)
    sd_r = np.sqrt(var_r)
    total = 0.0
    if branch in ("both", "quiet"):
        c = _branch_cdf(edges, np.asarray(mean_r), sd_r, tau, quiet, alarm=False)
        total += float(c[..., 1] - c[..., 0])
    if branch in ("both", "alarm"):
        c = _branch_cdf(edges, np.asarray(mean_r), sd_r, tau, alarm, alarm=True)
        total += float(c[..., 1] - c[..., 0])
    return max(total, 0.0)


def _kernel_scalar(grid, actions, model, ssk, cfg, mitigation) -> TransitionKernel:
    e = grid.centers[:, 0][:, None]  # (D, 1)
    a = actions.vectors[:, 0][None, :]  # (1, A)
    model_only = mitigation.kind == "model_only"
    mean_r, var_r, quiet, alarm = _scalar_branches(e, a, model, ssk, a, mitigation.delta_variance, model_only)
    mean_r = np.broadcast_to(mean_r, (grid.D, actions.size))
    quiet = _Branch(np.broadcast_to(quiet.mean_x, mean_r.shape), quiet.var_x, quiet.cov_xr)
    alarm = _Branch(np.broadcast_to(alarm.mean_x, mean_r.shape), alarm.var_x, alarm.cov_xr)
    tau = cfg.scalar_band()
    edges = grid.cell_edges(0)
    sd_r = np.sqrt(var_r)
    cdf = _branch_cdf(edges, mean_r, sd_r, tau, quiet, False) + _branch_cdf(edges, mean_r, sd_r, tau, alarm, True)
    T = np.maximum(np.diff(cdf, axis=-1), 0.0)
    return _normalise(T, "analytic_scalar", 0)


def transition_prob_mc(
    e,
    a,
    cell_or_grid,
    model: SystemModel,
    ssk: SteadyStateKalman,
    cfg: DetectorConfig,
    strategy: MitigationStrategy,
    n_samples: int,
    rng: np.random.Generator,
):
    """Monte Carlo estimate of the next-error distribution.

    With an ``ErrorGrid`` returns the full (D,) cell histogram; with a
    ``(lo, hi)`` interval (scalar) returns the probability of that interval.
    """
    e = np.atleast_1d(np.asarray(e, dtype=float))
    a = np.atleast_1d(np.asarray(a, dtype=float))
    e_next, _ = _sample_next_error(e, a, model, ssk, cfg, strategy, n_samples, rng)
    if isinstance(cell_or_grid, ErrorGrid):
        idx = cell_or_grid.cell_index(e_next)
        return np.bincount(np.atleast_1d(idx), minlength=cell_or_grid.D) / n_samples
    lo, hi = cell_or_grid
    x = e_next[:, 0]
    return float(np.mean((x >= lo) & (x <= hi)))


def _sample_next_error(e, a, model, ssk, cfg, strategy, n_samples, rng):
    w = sample_noise(gaussian(model.Q), rng, n_samples)
    v = sample_noise(gaussian(model.R), rng, n_samples)
    r = (model.C @ model.A @ e + a) + w @ model.C.T + v
    _, i = detect(r, cfg)
    if strategy.kind == "model_only":
        quiet = error_step(e, w, v, a, np.zeros(n_samples), a, ssk)
        e_next = np.where(i[:, None].astype(bool), e @ model.A.T + w, quiet)
    else:
        delta = np.broadcast_to(a, (n_samples, a.size))
        if strategy.kind == "noisy" and strategy.sigma_mit > 0:
            delta = delta + strategy.sigma_mit * rng.standard_normal(delta.shape)
        e_next = error_step(e, w, v, a, i, delta, ssk)
    return e_next, i


def _kernel_mc(grid, actions, model, ssk, cfg, mitigation, n_samples, rng) -> TransitionKernel:
    T = np.zeros((grid.D, actions.size, grid.D))
    centers = grid.centers
    clamp_hits = 0
    for s in range(grid.D):
        for k in range(actions.size):
            e_next, _ = _sample_next_error(centers[s], actions.vectors[k], model, ssk, cfg, mitigation, n_samples, rng)
            outside = np.any((e_next < grid.box_lower) | (e_next > grid.box_lower + grid.width * grid.d), axis=1)
            clamp_hits += int(outside.sum())
            T[s, k] = np.bincount(grid.cell_index(e_next), minlength=grid.D)
    T /= n_samples
    frac = clamp_hits / (grid.D * actions.size * n_samples)
    if frac >= 0.01:
        log.warning("%.1f%% of Monte Carlo mass was clamped to boundary cells; widen the grid", 100 * frac)
    return _normalise(T, "monte_carlo", n_samples)


def _normalise(T: np.ndarray, method: str, n_samples: int) -> TransitionKernel:
    sums = T.sum(axis=-1)
    deficit = float(np.max(np.abs(sums - 1.0)))
    if deficit > 1e-9:
        log.info("kernel rows deviated from 1 by up to %.3e before renormalisation", deficit)
    T = T / sums[..., None]
    return TransitionKernel(T, method, n_samples, deficit)


def kernel_cache_key(**parts) -> str:
    def enc(v):
        if isinstance(v, np.ndarray):
            return v.tolist()
        if hasattr(v, "to_dict"):
            return v.to_dict()
        if hasattr(v, "__dataclass_fields__"):
            return {k: enc(getattr(v, k)) for k in v.__dataclass_fields__}
        return v

    blob = json.dumps({k: enc(v) for k, v in sorted(parts.items())}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def build_kernel(
    grid: ErrorGrid,
    actions: ActionSet,
    model: SystemModel,
    ssk: SteadyStateKalman,
    cfg: DetectorConfig,
    mitigation: MitigationStrategy,
    method: str = "auto",
    n_samples: int = 10_000,
    seed: int = 0,
    cache_dir=None,
) -> TransitionKernel:
    """Build (or load from ``cache_dir``) the D x A x D kernel."""
    if method == "auto":
        method = "analytic_scalar" if model.n == 1 and model.m == 1 else "monte_carlo"
    key = None
    if cache_dir is not None:
        key = kernel_cache_key(
            model=model.to_dict(), grid=grid, actions=actions, eta=cfg.eta, mitigation=mitigation,
            method=method, n_samples=n_samples if method == "monte_carlo" else 0,
            seed=seed if method == "monte_carlo" else 0,
        )
        path = Path(cache_dir) / f"kernel-{key[:24]}.npz"
        if path.exists():
            log.info("kernel served from cache %s", path)
            with np.load(path) as data:
                return TransitionKernel(data["T"], str(data["method"]), int(data["n_samples"]), float(data["deficit"]))
    if method == "analytic_scalar":
        kernel = _kernel_scalar(grid, actions, model, ssk, cfg, mitigation)
    elif method == "monte_carlo":
        kernel = _kernel_mc(grid, actions, model, ssk, cfg, mitigation, n_samples, np.random.default_rng(seed))
    else:
        raise ValueError(f"unknown kernel method {method!r}")
    if key is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        log.info("kernel cached to %s", path)
        np.savez(path, T=kernel.T, method=kernel.method, n_samples=kernel.n_samples, deficit=kernel.raw_deficit)
    return kernel


# -- rewards and value iteration --------------------------------------------------------


def reward_matrix(kernel: TransitionKernel, grid: ErrorGrid) -> np.ndarray:
    """(D, A) one-step expected reward sum_s' T[s, a, s'] ||xi_s'||^2."""
    sq = np.sum(grid.centers**2, axis=1)
    return kernel.T @ sq


def expected_reward(s: int, a: int, kernel: TransitionKernel, grid: ErrorGrid) -> float:
    return float(kernel.T[s, a] @ np.sum(grid.centers**2, axis=1))


def greedy(q: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    """Row-wise argmax; near-ties resolve to the smallest action index."""
    q = np.asarray(q)
    best = q.max(axis=-1, keepdims=True)
    tol = rel_tol * np.maximum(1.0, np.abs(best))
    return np.argmax(q >= best - tol, axis=-1)


@dataclass
class ValueFunctionPolicy:
    V: np.ndarray
    policy: np.ndarray
    mode: str
    horizon: int | None = None
    gamma: float | None = None
    Q: np.ndarray | None = None
    stage_policies: np.ndarray | None = None  # (T, D); row j = j+1 steps to go
    stage_values: np.ndarray | None = None  # (T+1, D); row j = j steps to go
    iterations: int = 0
    residual: float = 0.0

    def action_index(self, cells, t: int | None = None):
        """Action for cells at decision time t (0-based; t-th of T decisions)."""
        if self.stage_policies is None or t is None:
            return self.policy[cells]
        to_go = max(1, min(self.horizon - t, self.horizon))
        return self.stage_policies[to_go - 1][cells]


def _check_normalised(kernel: TransitionKernel, tol: float = 1e-6) -> None:
    dev = np.max(np.abs(kernel.T.sum(axis=-1) - 1.0))
    if dev > tol:
        raise KernelError(f"kernel rows are not normalised (max deviation {dev:.3e})")


def value_iteration(
    kernel: TransitionKernel,
    grid: ErrorGrid,
    actions: ActionSet | None = None,
    mode: str = "finite",
    horizon: int = 30,
    gamma: float = 0.95,
    tol: float = 1e-6,
    max_iter: int = 100_000,
    rewards: np.ndarray | None = None,
) -> ValueFunctionPolicy:
    """Backward induction over ``horizon`` stages, or discounted value iteration.

    Discounted mode stops once the sup-norm change falls below
    tol * (1 - gamma) / (2 gamma), which bounds the greedy policy's loss by tol.
    """
    _check_normalised(kernel)
    R = reward_matrix(kernel, grid) if rewards is None else np.asarray(rewards, dtype=float)
    T = kernel.T
    D, A = R.shape
    if mode == "finite":
        V = np.zeros(D)
        stages = np.zeros((horizon, D), dtype=np.int64)
        values = np.zeros((horizon + 1, D))
        Qk = R.copy()
        for k in range(horizon):
            Qk = R + T @ V
            stages[k] = greedy(Qk)
            V = Qk[np.arange(D), stages[k]]
            values[k + 1] = V
        return ValueFunctionPolicy(
            V=V, policy=stages[-1] if horizon else np.zeros(D, dtype=np.int64), mode="finite", horizon=horizon,
            Q=Qk, stage_policies=stages, stage_values=values, iterations=horizon,
        )
    if mode != "discounted":
        raise ValueError(f"unknown mode {mode!r}")
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    stop = tol * (1 - gamma) / (2 * gamma) if gamma > 0 else 0.0
    V = np.zeros(D)
    change = np.inf
    for it in range(1, max_iter + 1):
        Qk = R + gamma * (T @ V)
        V_new = Qk.max(axis=1)
        change = float(np.max(np.abs(V_new - V)))
        V = V_new
        if change <= stop:
            break
    Qk = R + gamma * (T @ V)
    pol = greedy(Qk)
    return ValueFunctionPolicy(V=V, policy=pol, mode="discounted", gamma=gamma, Q=Qk, iterations=it, residual=change)


def evaluate_stationary(kernel: TransitionKernel, grid: ErrorGrid, policy: np.ndarray, gamma: float) -> np.ndarray:
    """Exact discounted value of a stationary policy (linear solve)."""
    R = reward_matrix(kernel, grid)
    D = R.shape[0]
    idx = np.arange(D)
    P = kernel.T[idx, policy]
    return np.linalg.solve(np.eye(D) - gamma * P, R[idx, policy])


def evaluate_finite(kernel: TransitionKernel, grid: ErrorGrid, policy: np.ndarray, horizon: int) -> np.ndarray:
    """Finite-horizon value of a stationary policy."""
    R = reward_matrix(kernel, grid)
    D = R.shape[0]
    idx = np.arange(D)
    P = kernel.T[idx, policy]
    r = R[idx, policy]
    V = np.zeros(D)
    for _ in range(horizon):
        V = r + P @ V
    return V


# -- policy artefacts --------------------------------------------------------------------

POLICY_FORMAT = 1


@dataclass
class GridPolicy:
    """Cell-table attack policy, optionally time-varying (finite horizon)."""

    grid: ErrorGrid
    actions: ActionSet
    table: np.ndarray
    stage_tables: np.ndarray | None = None
    horizon: int | None = None

    @classmethod
    def from_solution(cls, sol: ValueFunctionPolicy, grid: ErrorGrid, actions: ActionSet) -> "GridPolicy":
        return cls(grid, actions, sol.policy, sol.stage_policies, sol.horizon)

    def act(self, errors, t: int | None = None) -> np.ndarray:
        cells = self.grid.cell_index(np.atleast_2d(errors))
        if self.stage_tables is None or t is None:
            return self.table[cells]
        to_go = min(max(self.horizon - t, 1), self.horizon)
        return self.stage_tables[to_go - 1][cells]

    def attack(self, errors, t: int | None = None) -> np.ndarray:
        return self.actions.vectors[self.act(errors, t)]

    def to_dict(self) -> dict:
        out = {
            "format": POLICY_FORMAT,
            "kind": "grid",
            "grid": self.grid.to_dict(),
            "actions": self.actions.to_dict(),
            "table": np.asarray(self.table).tolist(),
        }
        if self.stage_tables is not None:
            out["stage_tables"] = np.asarray(self.stage_tables).tolist()
            out["horizon"] = self.horizon
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GridPolicy":
        if data.get("format") != POLICY_FORMAT or data.get("kind") != "grid":
            raise ValueError("not a grid policy artefact")
        st = data.get("stage_tables")
        return cls(
            ErrorGrid.from_dict(data["grid"]),
            ActionSet.from_dict(data["actions"]),
            np.asarray(data["table"], dtype=np.int64),
            None if st is None else np.asarray(st, dtype=np.int64),
            data.get("horizon"),
        )
