"""Defender loop: Kalman update, chi-square detector, reactive mitigation.

Also holds the attacker-side estimator and the standalone error recursion
used by the MDP and RL environments. Functions broadcast over a leading
``runs`` dimension so Monte Carlo batches run as single numpy calls.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import ndtr
from scipy.stats import chi2

from .system_model import (
    DimensionError,
    NoiseSpec,
    SteadyStateKalman,
    SystemModel,
    _check_last,
    gaussian,
    initial_state,
    observe,
    sample_noise,
    step_plant,
)

MITIGATION_KINDS = ("perfect", "noisy", "model_only")


@dataclass(frozen=True)
class DetectorConfig:
    eta: float
    P_r: np.ndarray

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        P_r = np.atleast_2d(np.asarray(self.P_r, dtype=float))
        object.__setattr__(self, "P_r", P_r)
        object.__setattr__(self, "_P_r_inv", np.linalg.inv(P_r))

    @classmethod
    def from_kalman(cls, eta: float, ssk: SteadyStateKalman) -> "DetectorConfig":
        return cls(float(eta), ssk.P_r)

    @property
    def P_r_inv(self) -> np.ndarray:
        return self._P_r_inv

    def null_alarm_rate(self) -> float:
        """P(chi2_m > eta): alarm probability of an attack-free steady-state residual."""
        return float(chi2.sf(self.eta, self.P_r.shape[0]))

    def scalar_band(self) -> float:
        """Half-width sqrt(eta * P_r) of the no-alarm residual band (m = 1)."""
        return float(np.sqrt(self.eta * self.P_r[0, 0]))


@dataclass(frozen=True)
class MitigationStrategy:
    kind: str = "perfect"
    sigma_mit: float = 0.0

    def __post_init__(self):
        if self.kind not in MITIGATION_KINDS:
            raise ValueError(f"unknown mitigation kind {self.kind!r}")
        if self.sigma_mit < 0:
            raise ValueError("sigma_mit must be >= 0")

    @property
    def delta_variance(self) -> float:
        """Variance of the mitigation signal around the true attack."""
        return self.sigma_mit**2 if self.kind == "noisy" else 0.0

    def skips_innovation(self, i) -> np.ndarray:
        return np.asarray(i, dtype=bool) & (self.kind == "model_only")


def residual(x_hat, u, y_a, model: SystemModel, ssk: SteadyStateKalman | None = None) -> np.ndarray:
    x_hat = _check_last(x_hat, model.n, "x_hat")
    u = _check_last(u, model.p, "u")
    y_a = _check_last(y_a, model.m, "y_a")
    return y_a - (x_hat @ model.A.T + u @ model.B.T) @ model.C.T


def detect(r, cfg: DetectorConfig):
    """Return (g, i) with g = r' P_r^-1 r and i = 1 iff g > eta (g == eta is no alarm)."""
    r = np.asarray(r, dtype=float)
    if r.shape[-1:] != (cfg.P_r.shape[0],):
        raise DimensionError(f"residual has trailing dimension {r.shape[-1:]}, expected {cfg.P_r.shape[0]}")
    g = np.einsum("...i,ij,...j->...", r, cfg.P_r_inv, r)
    i = (g > cfg.eta).astype(np.int8)
    if g.ndim == 0:
        return float(g), int(i)
    return g, i


def detection_probability(
    e,
    a,
    model: SystemModel,
    ssk: SteadyStateKalman,
    cfg: DetectorConfig,
    n_samples: int = 100_000,
    rng: np.random.Generator | None = None,
    method: str = "auto",
) -> float:
    """P(alarm at the next step | e[t] = e, a[t+1] = a).

    The residual is r = CAe + Cw + a + v. For m = 1 the closed form
    P(|r| > sqrt(eta P_r)) is used unless ``method="mc"``.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    e = _check_last(np.atleast_1d(e), model.n, "e")
    a = _check_last(np.atleast_1d(a), model.m, "a")
    mean = model.C @ model.A @ e + a
    if method == "auto":
        method = "analytic" if model.m == 1 else "mc"
    if method == "analytic":
        if model.m != 1:
            raise ValueError("closed-form detection probability needs m = 1")
        sd = np.sqrt((model.C @ model.Q @ model.C.T + model.R)[0, 0])
        tau = cfg.scalar_band()
        if not np.isfinite(tau):
            return 0.0
        return float(ndtr((-tau - mean[0]) / sd) + ndtr((mean[0] - tau) / sd))
    rng = rng if rng is not None else np.random.default_rng()
    w = sample_noise(gaussian(model.Q), rng, n_samples)
    v = sample_noise(gaussian(model.R), rng, n_samples)
    r = mean + w @ model.C.T + v
    _, i = detect(r, cfg)
    return float(np.mean(i))


def mitigate(y_a, i, strategy: MitigationStrategy, a_true, rng: np.random.Generator | None = None) -> np.ndarray:
    """y_f = y_a - i * delta with delta built from the harness-known attack.

    ``model_only`` leaves the measurement untouched; the caller drops the
    innovation via ``strategy.skips_innovation(i)``.
    """
    y_a = np.asarray(y_a, dtype=float)
    i = np.asarray(i)
    if strategy.kind == "model_only":
        return y_a.copy()
    delta = np.broadcast_to(np.asarray(a_true, dtype=float), y_a.shape).copy()
    if strategy.kind == "noisy" and strategy.sigma_mit > 0:
        rng = rng if rng is not None else np.random.default_rng()
        delta = delta + strategy.sigma_mit * rng.standard_normal(y_a.shape)
    return y_a - i[..., None] * delta if i.ndim else y_a - i * delta


def kf_update(x_hat, u, y_f, model: SystemModel, ssk: SteadyStateKalman, skip_innovation=False) -> np.ndarray:
    x_hat = _check_last(x_hat, model.n, "x_hat")
    u = _check_last(u, model.p, "u")
    y_f = _check_last(y_f, model.m, "y_f")
    pred = x_hat @ model.A.T + u @ model.B.T
    innov = (y_f - pred @ model.C.T) @ ssk.K.T
    skip = np.asarray(skip_innovation, dtype=bool)
    if skip.ndim:
        innov = np.where(skip[..., None], 0.0, innov)
    elif skip:
        innov = np.zeros_like(innov)
    return pred + innov


def attacker_kf_update(
    x_hat_a, x_hat, u, y_true, model: SystemModel, ssk: SteadyStateKalman, innovation_ref: str = "own"
) -> np.ndarray:
    """Attacker's filter driven by the true (pre-injection) measurements.

    ``innovation_ref="own"`` forms the innovation around the attacker's own
    prediction; ``"defender"`` uses the defender's prediction A x_hat + B u.
    The two coincide whenever x_hat_a == x_hat.
    """
    x_hat_a = _check_last(x_hat_a, model.n, "x_hat_a")
    ref = x_hat_a if innovation_ref == "own" else _check_last(x_hat, model.n, "x_hat")
    pred_ref = ref @ model.A.T + u @ model.B.T
    pred = x_hat_a @ model.A.T + u @ model.B.T
    return pred + (y_true - pred_ref @ model.C.T) @ ssk.K.T


def error_step(e, w, v, a, i, delta, ssk: SteadyStateKalman) -> np.ndarray:
    """e' = A_K e + W_K w - K (a - i delta) - K v."""
    e = np.asarray(e, dtype=float)
    i = np.asarray(i, dtype=float)
    a_m = np.asarray(a, dtype=float) - (i[..., None] if i.ndim else i) * np.asarray(delta, dtype=float)
    return e @ ssk.A_K.T + np.asarray(w) @ ssk.W_K.T - (a_m + np.asarray(v)) @ ssk.K.T


# -- closed loop ------------------------------------------------------------------


@dataclass
class AttackContext:
    """What an attack generator may look at when choosing a[t+1]."""

    t: int  # index of the step being attacked (t + 1 in plant time)
    x: np.ndarray
    x_hat: np.ndarray
    x_hat_a: np.ndarray
    rng: np.random.Generator

    @property
    def error(self) -> np.ndarray:
        return self.x - self.x_hat

    @property
    def estimated_error(self) -> np.ndarray:
        return self.x_hat_a - self.x_hat


AttackFn = Callable[[AttackContext], np.ndarray]
ControlFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class LoopTrace:
    x: np.ndarray  # (runs, T+1, n)
    x_hat: np.ndarray
    x_hat_a: np.ndarray
    y: np.ndarray  # (runs, T+1, m); y[:, 0] is nan
    a: np.ndarray
    g: np.ndarray  # (runs, T+1)
    i: np.ndarray
    u: np.ndarray  # (runs, T+1, p); u[:, t] applied between t and t+1
    extras: dict = field(default_factory=dict)

    @property
    def error(self) -> np.ndarray:
        return self.x - self.x_hat

    @property
    def horizon(self) -> int:
        return self.x.shape[1] - 1


def simulate_loop(
    model: SystemModel,
    ssk: SteadyStateKalman,
    detector: DetectorConfig,
    mitigation: MitigationStrategy,
    horizon: int,
    runs: int,
    rng: np.random.Generator,
    *,
    attack: AttackFn | None = None,
    control: ControlFn | None = None,
    x_init=None,
    x_hat_init=None,
    process_noise: NoiseSpec | None = None,
    measurement_noise: NoiseSpec | None = None,
    attacker_innovation: str = "own",
    keep_noise: bool = False,
) -> LoopTrace:
    """Vectorised Monte Carlo of the full plant/sensor/detector/mitigation/KF loop.

    Per step: u = control(x_hat); x' = Ax + Bu + w; y = Cx' + v; a from the
    attack generator (which sees time-t quantities); residual, detection,
    mitigation, defender and attacker KF updates.
    """
    n, m, p = model.n, model.m, model.p
    pn = process_noise or gaussian(model.Q)
    mn = measurement_noise or gaussian(model.R)

    x = np.empty((runs, horizon + 1, n))
    xh = np.empty_like(x)
    xa = np.empty_like(x)
    y = np.full((runs, horizon + 1, m), np.nan)
    a_rec = np.zeros((runs, horizon + 1, m))
    g_rec = np.zeros((runs, horizon + 1))
    i_rec = np.zeros((runs, horizon + 1), dtype=np.int8)
    u_rec = np.zeros((runs, horizon + 1, p))
    extras = {}
    if keep_noise:
        extras = {k: np.zeros((runs, horizon + 1, d)) for k, d in (("w", n), ("v", m), ("delta", m))}

    x[:, 0] = initial_state(model, rng, runs) if x_init is None else np.broadcast_to(x_init, (runs, n))
    xh[:, 0] = 0.0 if x_hat_init is None else np.broadcast_to(x_hat_init, (runs, n))
    xa[:, 0] = xh[:, 0]

    for t in range(horizon):
        xt, xht, xat = x[:, t], xh[:, t], xa[:, t]
        u = control(xht) if control is not None else np.zeros((runs, p))
        u_rec[:, t] = u
        w = sample_noise(pn, rng, runs)
        x[:, t + 1] = step_plant(model, xt, u, w)
        v = sample_noise(mn, rng, runs)
        y_true = observe(model, x[:, t + 1], v)
        if attack is not None:
            a = np.broadcast_to(attack(AttackContext(t + 1, xt, xht, xat, rng)), (runs, m))
        else:
            a = np.zeros((runs, m))
        y_a = y_true + a
        r = residual(xht, u, y_a, model)
        g, i = detect(r, detector)
        if mitigation.kind == "noisy" and mitigation.sigma_mit > 0:
            delta = a + mitigation.sigma_mit * rng.standard_normal((runs, m))
        else:
            delta = a.copy()
        y_f = y_a if mitigation.kind == "model_only" else y_a - i[:, None] * delta
        xh[:, t + 1] = kf_update(xht, u, y_f, model, ssk, mitigation.skips_innovation(i))
        xa[:, t + 1] = attacker_kf_update(xat, xht, u, y_true, model, ssk, attacker_innovation)
        y[:, t + 1] = y_true
        a_rec[:, t + 1] = a
        g_rec[:, t + 1] = g
        i_rec[:, t + 1] = i
        if keep_noise:
            extras["w"][:, t] = w
            extras["v"][:, t + 1] = v
            extras["delta"][:, t + 1] = delta
    if control is not None:
        u_rec[:, horizon] = control(xh[:, horizon])
    return LoopTrace(x, xh, xa, y, a_rec, g_rec, i_rec, u_rec, extras)


def trajectory_columns(n: int, m: int, p: int) -> list[str]:
    cols = ["t"]
    cols += [f"x_{k + 1}" for k in range(n)]
    cols += [f"xhat_{k + 1}" for k in range(n)]
    cols += [f"xhata_{k + 1}" for k in range(n)]
    cols += [f"y_{k + 1}" for k in range(m)]
    cols += [f"a_{k + 1}" for k in range(m)]
    cols += ["g", "i"]
    cols += [f"u_{k + 1}" for k in range(p)]
    return cols


def write_trajectory_csv(trace: LoopTrace, run: int, path, header_lines: list[str] | None = None) -> None:
    """One run of a trace as CSV (columns from ``trajectory_columns``)."""
    n, m, p = trace.x.shape[2], trace.y.shape[2], trace.u.shape[2]
    with open(Path(path), "w", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(trajectory_columns(n, m, p))
        for t in range(trace.x.shape[1]):
            row = [t]
            row += [repr(float(v)) for v in trace.x[run, t]]
            row += [repr(float(v)) for v in trace.x_hat[run, t]]
            row += [repr(float(v)) for v in trace.x_hat_a[run, t]]
            row += [repr(float(v)) for v in trace.y[run, t]]
            row += [repr(float(v)) for v in trace.a[run, t]]
            row += [repr(float(trace.g[run, t])), int(trace.i[run, t])]
            row += [repr(float(v)) for v in trace.u[run, t]]
            writer.writerow(row)
