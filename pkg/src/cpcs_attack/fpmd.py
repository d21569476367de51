"""Cumulative estimation error over detection paths, and FP / MD costs.

For scalar systems the error conditioned on a detection history b is tracked
by its probability, mean and second moment. One step forms the joint Gaussian
law of the residual y and the next error x given the parent moments, then
integrates over the no-alarm band |y| <= sqrt(eta P_r) (i = 0) or its
complement (i = 1):

    E[x 1_i]   = xbar m0 + c m1
    E[x^2 1_i] = (cvar + xbar^2) m0 + 2 xbar c m1 + c^2 m2

where c = Sxy / Syy, cvar = Sxx - Sxy^2 / Syy and (m0, m1, m2) are the
partial moments of y - ybar on the branch interval.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .estimation import DetectorConfig, MitigationStrategy, simulate_loop
from .gaussian import band_moments
from .system_model import SteadyStateKalman, SystemModel

log = logging.getLogger(__name__)

DEAD_BRANCH = 1e-15


@dataclass(frozen=True)
class PathNode:
    path: tuple
    prob: float
    mean: float
    second_moment: float

    @property
    def variance(self) -> float:
        return max(self.second_moment - self.mean**2, 0.0)

    @property
    def dead(self) -> bool:
        return self.prob < DEAD_BRANCH


@dataclass(frozen=True)
class MomentStepParams:
    S_yy: float
    S_xy: float
    S_xx: float
    x_bar: float
    y_bar: float
    limits: tuple
    B_mit: float


def _scalars(model: SystemModel, ssk: SteadyStateKalman) -> dict:
    f = lambda M: float(np.asarray(M).ravel()[0])  # noqa: E731
    if model.n != 1 or model.m != 1:
        raise ValueError("the detection-path recursion is scalar only (n = m = 1)")
    return {
        "A": f(model.A), "C": f(model.C), "Q": f(model.Q), "R": f(model.R),
        "K": f(ssk.K), "A_K": f(ssk.A_K), "W_K": f(ssk.W_K), "P_e": f(ssk.P_e),
    }


def _step_terms(s: dict, mu, V, a, i: int, mitigation: MitigationStrategy):
    """Joint-Gaussian terms (ybar, Syy, xbar, Sxx, Sxy) for branch i."""
    y_bar = s["C"] * s["A"] * mu + a
    S_yy = (s["C"] * s["A"]) ** 2 * V + s["C"] ** 2 * s["Q"] + s["R"]
    if i == 1 and mitigation.kind == "model_only":
        # innovation dropped: x' = A e + w
        x_bar = s["A"] * mu + 0.0 * a
        S_xx = s["A"] ** 2 * V + s["Q"]
        S_xy = s["A"] * V * s["A"] * s["C"] + s["Q"] * s["C"]
        return y_bar, S_yy, x_bar, S_xx, S_xy
    B_mit = mitigation.delta_variance
    # delta has mean a under perfect / noisy mitigation, so a - i*delta_bar = (1 - i) a
    x_bar = s["A_K"] * mu - s["K"] * (a - i * a)
    S_xx = s["A_K"] ** 2 * V + s["W_K"] ** 2 * s["Q"] + s["K"] ** 2 * s["R"] + i * s["K"] ** 2 * B_mit
    S_xy = s["A_K"] * V * s["A"] * s["C"] + s["W_K"] * s["Q"] * s["C"] - s["K"] * s["R"]
    return y_bar, S_yy, x_bar, S_xx, S_xy


def step_params(node: PathNode, a_next: float, i: int, model, ssk, cfg: DetectorConfig, mitigation) -> MomentStepParams:
    s = _scalars(model, ssk)
    y_bar, S_yy, x_bar, S_xx, S_xy = _step_terms(s, node.mean, node.variance, a_next, i, mitigation)
    tau = cfg.scalar_band()
    limits = (-tau, tau) if i == 0 else ((-np.inf, -tau), (tau, np.inf))
    return MomentStepParams(S_yy, S_xy, S_xx, x_bar, y_bar, limits, mitigation.delta_variance)


def _branch(s, prob, mu, E2, a, i, tau, mitigation):
    """Vectorised child moments for branch i. Returns (prob, mean, second_moment)."""
    V = np.maximum(E2 - mu * mu, 0.0)
    y_bar, S_yy, x_bar, S_xx, S_xy = _step_terms(s, mu, V, a, i, mitigation)
    m0, m1, m2 = band_moments(y_bar, np.sqrt(S_yy), tau, inside=(i == 0))
    c = S_xy / S_yy
    cvar = np.maximum(S_xx - S_xy * c, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.where(m0 > 0, m1 / m0, 0.0)
        r2 = np.where(m0 > 0, m2 / m0, 0.0)
    mean = x_bar + c * r1
    E2_new = cvar + x_bar**2 + 2 * x_bar * c * r1 + c * c * r2
    return prob * m0, mean, E2_new


def moment_step(
    node: PathNode,
    a_next: float,
    i: int,
    model: SystemModel,
    ssk: SteadyStateKalman,
    cfg: DetectorConfig,
    mitigation: MitigationStrategy,
) -> PathNode:
    """Child of ``node`` along detection outcome ``i`` with attack ``a_next``."""
    s = _scalars(model, ssk)
    p, mu, E2 = _branch(s, node.prob, node.mean, node.second_moment, a_next, int(i), cfg.scalar_band(), mitigation)
    return PathNode(node.path + (int(i),), float(p), float(mu), float(E2))


def start_node(ssk: SteadyStateKalman, mean: float = 0.0, variance: float | None = None) -> PathNode:
    v = float(np.asarray(ssk.P_e).ravel()[0]) if variance is None else variance
    return PathNode((), 1.0, mean, v + mean**2)


@dataclass
class CumulativeErrorResult:
    per_step: np.ndarray  # E[e[t]^2] for t = 1..T
    pruned_mass: float
    live_nodes: np.ndarray  # live node count per depth
    warnings: list = field(default_factory=list)
    alarm_prob: np.ndarray | None = None  # P(i[t] = 1) for t = 1..T

    @property
    def total(self) -> float:
        return float(np.sum(self.per_step))


def cumulative_error(
    attack_seq,
    model: SystemModel,
    ssk: SteadyStateKalman,
    cfg: DetectorConfig,
    mitigation: MitigationStrategy,
    prune_tol: float = 1e-9,
    max_nodes: int = 1 << 20,
    init: PathNode | None = None,
    mitigate_false_alarms: bool = True,
) -> CumulativeErrorResult:
    """Expected squared error per step, summed over all detection paths.

    ``attack_seq[t]`` is the injection at step t + 1. Children with probability
    below ``prune_tol`` (and the least likely beyond ``max_nodes``) are
    collapsed into one moment-matched remainder node, so no probability mass
    is lost; the collapsed mass is reported as ``pruned_mass``.
    With ``mitigate_false_alarms=False`` an alarm at an unattacked step
    costs nothing (the mitigation is exact), which isolates missed detections.
    """
    a_seq = np.asarray(attack_seq, dtype=float).ravel()
    s = _scalars(model, ssk)
    tau = cfg.scalar_band()
    exact = MitigationStrategy("perfect")
    node = init or start_node(ssk)
    prob = np.array([node.prob])
    mu = np.array([node.mean])
    E2 = np.array([node.second_moment])
    per_step = np.zeros(a_seq.size)
    alarm = np.zeros(a_seq.size)
    live = np.zeros(a_seq.size, dtype=np.int64)
    pruned = 0.0
    for t, a in enumerate(a_seq):
        mit = mitigation if (mitigate_false_alarms or a != 0.0) else exact
        p0, mu0, E20 = _branch(s, prob, mu, E2, a, 0, tau, mit)
        p1, mu1, E21 = _branch(s, prob, mu, E2, a, 1, tau, mit)
        prob = np.concatenate([p0, p1])
        mu = np.concatenate([mu0, mu1])
        E2 = np.concatenate([E20, E21])
        alarm[t] = p1.sum()
        per_step[t] = float(prob @ E2)
        keep = prob >= prune_tol
        if keep.sum() > max_nodes - 1:
            cut = np.partition(prob, -(max_nodes - 1))[-(max_nodes - 1)]
            keep &= prob >= cut
        drop = ~keep & (prob > 0)
        if drop.any():
            mass = float(prob[drop].sum())
            pruned += mass
            rest_mu = float(prob[drop] @ mu[drop]) / mass
            rest_E2 = float(prob[drop] @ E2[drop]) / mass
            prob = np.append(prob[keep], mass)
            mu = np.append(mu[keep], rest_mu)
            E2 = np.append(E2[keep], rest_E2)
        else:
            prob, mu, E2 = prob[keep], mu[keep], E2[keep]
        live[t] = prob.size
    warnings = []
    if pruned > 1e-4:
        warnings.append(f"pruned probability mass {pruned:.3e} exceeds 1e-4")
        log.warning(warnings[-1])
    return CumulativeErrorResult(per_step, pruned, live, warnings, alarm)


def oracle_reference_error(
    attack_seq,
    model: SystemModel,
    ssk: SteadyStateKalman,
    mitigation: MitigationStrategy,
    horizon: int | None = None,
    init: PathNode | None = None,
) -> np.ndarray:
    """E[e[t]^2] when the alarm fires exactly at the attacked steps (a != 0)."""
    a_seq = np.asarray(attack_seq, dtype=float).ravel()
    if horizon is not None:
        a_seq = _fit_length(a_seq, horizon)
    s = _scalars(model, ssk)
    node = init or start_node(ssk)
    mu, V = node.mean, node.variance
    out = np.zeros(a_seq.size)
    for t, a in enumerate(a_seq):
        i = int(a != 0.0)
        _, _, mu, V, _ = _step_terms(s, mu, V, a, i, mitigation)
        out[t] = V + mu * mu
    return out


def _fit_length(a_seq: np.ndarray, horizon: int) -> np.ndarray:
    if a_seq.size == 1:
        return np.full(horizon, a_seq[0])
    if a_seq.size < horizon:
        raise ValueError(f"attack sequence has {a_seq.size} steps, horizon is {horizon}")
    return a_seq[:horizon]


def fp_cost(eta: float, sigma_mit: float, model: SystemModel, ssk: SteadyStateKalman, horizon: int, **kw) -> float:
    """Extra cumulative error caused by false alarms under noisy mitigation."""
    cfg = DetectorConfig.from_kalman(eta, ssk)
    mit = MitigationStrategy("noisy", sigma_mit)
    zero = np.zeros(horizon)
    sys = cumulative_error(zero, model, ssk, cfg, mit, **kw).total
    ref = oracle_reference_error(zero, model, ssk, mit).sum()
    return float(sys - ref)


def md_cost(
    eta: float,
    sigma_mit: float,
    attack_seq,
    model: SystemModel,
    ssk: SteadyStateKalman,
    horizon: int,
    **kw,
) -> float:
    """Extra cumulative error of the detector over the oracle under ``attack_seq``.

    Only missed detections count: alarms at unattacked steps are false
    positives, priced by ``fp_cost``, and are treated as harmless here.
    """
    cfg = DetectorConfig.from_kalman(eta, ssk)
    mit = MitigationStrategy("noisy", sigma_mit)
    a_seq = _fit_length(np.asarray(attack_seq, dtype=float).ravel(), horizon)
    sys = cumulative_error(a_seq, model, ssk, cfg, mit, mitigate_false_alarms=False, **kw).total
    ref = oracle_reference_error(a_seq, model, ssk, mit).sum()
    return float(sys - ref)


def monte_carlo_error(
    attack_seq,
    model: SystemModel,
    ssk: SteadyStateKalman,
    cfg: DetectorConfig,
    mitigation: MitigationStrategy,
    runs: int,
    rng: np.random.Generator,
    batch: int = 20_000,
):
    """Closed-loop estimate of E[e[t]^2], t = 1..T, with its standard error.

    Runs start in steady state: x[0] ~ N(0, P_e) and x_hat[0] = 0.
    """
    a_seq = np.asarray(attack_seq, dtype=float).ravel()
    T = a_seq.size
    n = model.n
    s1 = np.zeros(T)
    s2 = np.zeros(T)
    done = 0
    L = np.linalg.cholesky(ssk.P_e + 1e-300 * np.eye(n)) if np.any(ssk.P_e) else np.zeros((n, n))
    attack = lambda ctx: np.full((ctx.x.shape[0], model.m), a_seq[ctx.t - 1])  # noqa: E731
    while done < runs:
        b = min(batch, runs - done)
        x0 = rng.standard_normal((b, n)) @ L.T
        tr = simulate_loop(model, ssk, cfg, mitigation, T, b, rng, attack=attack, x_init=x0, x_hat_init=np.zeros(n))
        sq = np.sum(tr.error[:, 1:] ** 2, axis=-1)
        s1 += sq.sum(axis=0)
        s2 += (sq**2).sum(axis=0)
        done += b
    mean = s1 / runs
    se = np.sqrt(np.maximum(s2 / runs - mean**2, 0.0) / runs)
    return mean, se


@dataclass
class OptimalMdResult:
    md_cost: float
    system_value: float
    oracle_value: float
    policy: np.ndarray


def md_cost_optimal(
    eta: float,
    sigma_mit: float,
    model: SystemModel,
    ssk: SteadyStateKalman,
    horizon: int,
    a_max: float = 20.0,
    action_step: float = 2.0,
    d: int = 81,
    bounds=None,
) -> OptimalMdResult:
    """MD cost under the finite-horizon optimal attack.

    The system value is V(cell of e = 0) from value iteration on the detector
    kernel (with the zero action alarm-free, as in ``md_cost``). The oracle value evaluates the same time-varying policy on the
    kernel where the alarm fires exactly when the chosen action is non-zero.
    """
    from .mdp import ActionSet, build_grid, build_kernel, default_bounds, reward_matrix, value_iteration

    acts = ActionSet.scalar_levels(a_max, action_step)
    grid = build_grid(default_bounds(ssk, a_max, mitigation_sd=sigma_mit) if bounds is None else bounds, d)
    mit = MitigationStrategy("noisy", sigma_mit)
    cfg = DetectorConfig.from_kalman(eta, ssk)
    quiet = build_kernel(grid, acts, model, ssk, DetectorConfig(np.inf, ssk.P_r), mit)
    alarm = build_kernel(grid, acts, model, ssk, DetectorConfig(0.0, ssk.P_r), mit)
    zero = np.all(acts.vectors == 0.0, axis=1)
    # false alarms are priced by fp_cost, so the zero action never triggers mitigation here
    kern = build_kernel(grid, acts, model, ssk, cfg, mit)
    kern = type(kern)(np.where(zero[None, :, None], quiet.T, kern.T), kern.method)
    sol = value_iteration(kern, grid, acts, mode="finite", horizon=horizon)
    # oracle kernel: no alarm for the zero action, certain alarm otherwise
    T_or = np.where(zero[None, :, None], quiet.T, alarm.T)
    R_or = reward_matrix(type(kern)(T_or, "oracle"), grid)
    idx = np.arange(grid.D)
    V = np.zeros(grid.D)
    for k in range(horizon):
        pol = sol.stage_policies[k]
        V = R_or[idx, pol] + T_or[idx, pol] @ V
    s0 = grid.cell_index([0.0])
    return OptimalMdResult(float(sol.V[s0] - V[s0]), float(sol.V[s0]), float(V[s0]), sol.policy)
