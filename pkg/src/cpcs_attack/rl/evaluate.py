"""Batched policy evaluation on the error-dynamics environment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import ErrorDynamicsEnv


@dataclass
class EvalResult:
    mean: float  # mean cumulative reward over the horizon
    se: float
    per_step: np.ndarray  # mean reward at each step
    detection: np.ndarray  # empirical alarm rate at each step
    runs: int

    @property
    def time_average(self) -> float:
        return self.mean / self.per_step.size

    @property
    def time_average_se(self) -> float:
        return self.se / self.per_step.size


class ZeroPolicy:
    """Never attacks (action index of the zero vector)."""

    def __init__(self, actions):
        self.index = int(np.flatnonzero(np.all(actions.vectors == 0.0, axis=1))[0])

    def __call__(self, e, t=None):
        e = np.atleast_2d(e)
        return np.full(e.shape[0], self.index, dtype=np.int64)


class RandomPolicy:
    """Uniform over the action set, drawn from its own generator."""

    def __init__(self, n_actions: int, seed: int = 0):
        self.n_actions = n_actions
        self.rng = np.random.default_rng(seed)

    def __call__(self, e, t=None):
        e = np.atleast_2d(e)
        return self.rng.integers(self.n_actions, size=e.shape[0])


class ConstantPolicy:
    def __init__(self, index: int):
        self.index = int(index)

    def __call__(self, e, t=None):
        e = np.atleast_2d(e)
        return np.full(e.shape[0], self.index, dtype=np.int64)


def as_policy(obj):
    """Adapt a GridPolicy / learned approximator / callable to ``f(e, t) -> indices``."""
    if hasattr(obj, "act"):
        return lambda e, t=None: obj.act(e, t)
    if callable(obj):
        return obj
    raise TypeError(f"cannot use {type(obj).__name__} as a policy")


def evaluate_policy(
    policy,
    env: ErrorDynamicsEnv,
    runs: int,
    rng: np.random.Generator,
    horizon: int = 50,
) -> EvalResult:
    """Mean cumulative reward (sum of ||e[t]||^2, t = 1..horizon) over ``runs``."""
    pol = as_policy(policy)
    e = env.reset(rng, runs)
    rewards = np.zeros((runs, horizon))
    alarms = np.zeros((runs, horizon))
    for t in range(horizon):
        act = np.asarray(pol(e, t), dtype=np.int64).reshape(runs)
        e, r, i = env.step(e, act, rng)
        rewards[:, t] = r
        alarms[:, t] = i
    total = rewards.sum(axis=1)
    se = float(total.std(ddof=1) / np.sqrt(runs)) if runs > 1 else 0.0
    return EvalResult(float(total.mean()), se, rewards.mean(axis=0), alarms.mean(axis=0), runs)
