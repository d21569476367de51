"""Tabular Q-learning and the shared epsilon-greedy training loop."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..mdp import ErrorGrid, greedy
from ..seeding import rng_for
from .env import ErrorDynamicsEnv


class DivergenceError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class RlConfig:
    alpha: float = 0.1
    gamma: float = 0.95
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.5  # fraction of episodes over which epsilon decays
    episodes: int = 2000
    horizon: int = 50
    seed: int = 0
    exploring_starts: bool = False  # training episodes start uniformly over the grid box

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        for name in ("eps_start", "eps_end", "eps_decay_frac"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")

    def epsilon(self, episode: int) -> float:
        """Linear decay from eps_start to eps_end, then flat."""
        span = self.eps_decay_frac * self.episodes
        if span <= 0:
            return self.eps_end
        frac = min(episode / span, 1.0)
        return self.eps_start + frac * (self.eps_end - self.eps_start)

    def to_dict(self) -> dict:
        return asdict(self)


def q_update(Q: np.ndarray, s: int, a: int, r: float, s_next: int, alpha: float, gamma: float) -> np.ndarray:
    """Q(s,a) <- (1 - alpha) Q(s,a) + alpha (r + gamma max_a' Q(s',a')), in place."""
    D, A = Q.shape
    if not (0 <= s < D and 0 <= s_next < D and 0 <= a < A):
        raise IndexError(f"(s={s}, a={a}, s'={s_next}) outside a {D}x{A} table")
    target = r + gamma * Q[s_next].max()
    Q[s, a] = Q[s, a] + alpha * (target - Q[s, a])
    return Q


def epsilon_greedy(q_row, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform action with probability epsilon, else argmax (smallest index on ties).

    Always consumes one uniform draw so that two learners fed the same
    generator stay in lockstep.
    """
    q_row = np.asarray(q_row)
    u = rng.random()
    if u < epsilon:
        return int(rng.integers(q_row.size))
    return int(greedy(q_row))


class TabularQ:
    """D x A action-value table indexed through an ErrorGrid."""

    kind = "tabular"

    def __init__(self, grid: ErrorGrid, n_actions: int):
        self.grid = grid
        self.Q = np.zeros((grid.D, n_actions))

    @property
    def n_actions(self) -> int:
        return self.Q.shape[1]

    def q_values(self, e) -> np.ndarray:
        return self.Q[self.grid.cell_index(e)]

    def update(self, e, a: int, target: float, alpha: float) -> None:
        s = self.grid.cell_index(e)
        self.Q[s, a] = self.Q[s, a] + alpha * (target - self.Q[s, a])

    def check(self) -> None:
        if not np.all(np.isfinite(self.Q)):
            raise DivergenceError("non-finite Q-table entry", {"max_abs": float(np.nanmax(np.abs(self.Q)))})

    def act(self, e, t=None) -> np.ndarray:
        return greedy(self.Q[self.grid.cell_index(np.atleast_2d(e))])

    @property
    def policy(self) -> np.ndarray:
        return greedy(self.Q)


def uniform_starts(grid: ErrorGrid):
    lo = grid.box_lower
    hi = grid.box_lower + grid.width * grid.d
    return lambda rng: rng.uniform(lo, hi)


def run_q_learning(env: ErrorDynamicsEnv, learner, cfg: RlConfig, callback=None, every: int = 0, starts=None):
    """Algorithm-agnostic epsilon-greedy Q-learning over ``cfg.episodes`` episodes.

    ``learner`` exposes ``q_values(e)``, ``update(e, a, target, alpha)`` and
    ``check()``. Episodes are truncated at ``cfg.horizon`` and bootstrap from
    the last state. ``callback(episode, learner)`` runs every ``every``
    episodes (and after the last one). ``starts(rng)`` overrides the
    environment's initial-state draw during training.
    """
    rng_env = rng_for(cfg.seed, 0, "env")
    rng_explore = rng_for(cfg.seed, 0, "explore")
    for ep in range(cfg.episodes):
        eps = cfg.epsilon(ep)
        e = env.reset(rng_env) if starts is None else starts(rng_env)
        for _ in range(cfg.horizon):
            a = epsilon_greedy(learner.q_values(e), eps, rng_explore)
            e_next, r, _ = env.step(e, a, rng_env)
            target = float(r) + cfg.gamma * float(np.max(learner.q_values(e_next)))
            learner.update(e, a, target, cfg.alpha)
            e = e_next
        learner.check()
        if callback is not None and every and ((ep + 1) % every == 0 or ep + 1 == cfg.episodes):
            callback(ep + 1, learner)
    return learner


def q_learning_train(env: ErrorDynamicsEnv, grid: ErrorGrid, cfg: RlConfig, callback=None, every: int = 0) -> TabularQ:
    starts = uniform_starts(grid) if cfg.exploring_starts else None
    return run_q_learning(env, TabularQ(grid, env.n_actions), cfg, callback, every, starts)
