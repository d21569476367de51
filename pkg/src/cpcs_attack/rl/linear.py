"""Q-learning with linear function approximation over binary state features.

Q(xi, a) = phi(xi)' theta(a). The fixed sparse representation (FSR) encodes
each state dimension as a one-hot block over its d grid levels, giving
K = n d features with exactly n ones. The joint encoder is the full one-hot
over all D = d^n cells, under which the linear learner coincides with the
tabular one.
"""

from __future__ import annotations

import numpy as np

from ..mdp import ErrorGrid, greedy
from .env import ErrorDynamicsEnv
from .tabular import DivergenceError, RlConfig, run_q_learning, uniform_starts

THETA_LIMIT = 1e8


class FsrEncoder:
    kind = "fsr"

    def __init__(self, grid: ErrorGrid):
        self.grid = grid

    @property
    def K(self) -> int:
        return self.grid.n * self.grid.d

    def active(self, e) -> np.ndarray:
        """Indices of the ones, shape (..., n)."""
        idx = self.grid.dim_indices(np.asarray(e, dtype=float))
        return idx + self.grid.d * np.arange(self.grid.n)

    def encode(self, e) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        act = self.active(e)
        out = np.zeros(e.shape[:-1] + (self.K,))
        np.put_along_axis(out, act, 1.0, axis=-1)
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "grid": self.grid.to_dict()}


class JointOneHotEncoder(FsrEncoder):
    kind = "joint"

    @property
    def K(self) -> int:
        return self.grid.D

    def active(self, e) -> np.ndarray:
        return np.asarray(self.grid.cell_index(e))[..., None]


def make_encoder(data: dict):
    grid = ErrorGrid.from_dict(data["grid"])
    return {"fsr": FsrEncoder, "joint": JointOneHotEncoder}[data["kind"]](grid)


class LinearQ:
    """Per-action weight vectors theta(a) of length K, initialised at 0.

    ``normalize`` divides the step size by ||phi||^2 (= n for FSR), keeping
    the effective step at alpha regardless of dimension.
    ``multiply_adds`` counts scalar multiply-adds spent forming Q values.
    """

    kind = "linear"

    def __init__(self, encoder, n_actions: int, normalize: bool = True):
        self.encoder = encoder
        self.theta = np.zeros((n_actions, encoder.K))
        self.normalize = normalize
        self.multiply_adds = 0

    @property
    def n_actions(self) -> int:
        return self.theta.shape[0]

    def q_values(self, e) -> np.ndarray:
        phi = self.encoder.encode(e)
        self.multiply_adds += self.theta.size * (phi.size // self.encoder.K)
        return phi @ self.theta.T

    def update(self, e, a: int, target: float, alpha: float) -> None:
        phi = self.encoder.encode(e)
        delta = target - self.theta[a] @ phi
        step = alpha / (phi @ phi) if self.normalize else alpha
        self.theta[a] += (step * delta) * phi

    def check(self) -> None:
        top = float(np.max(np.abs(self.theta))) if self.theta.size else 0.0
        if not np.isfinite(top) or top > THETA_LIMIT:
            raise DivergenceError(
                f"QLFA weights diverged (max |theta| = {top:.3e})",
                {"max_abs_theta": top, "argmax": np.unravel_index(np.nanargmax(np.abs(self.theta)), self.theta.shape)},
            )

    def act(self, e, t=None) -> np.ndarray:
        phi = self.encoder.encode(np.atleast_2d(e))
        return greedy(phi @ self.theta.T)


def qlfa_train(env: ErrorDynamicsEnv, encoder, cfg: RlConfig, normalize: bool = True, callback=None, every: int = 0) -> LinearQ:
    learner = LinearQ(encoder, env.n_actions, normalize)
    starts = uniform_starts(encoder.grid) if cfg.exploring_starts else None
    return run_q_learning(env, learner, cfg, callback, every, starts)
