"""Q-learning with a small ReLU network, experience replay and a target network.

Pure numpy: forward/backward passes are written out by hand so the analytic
gradient can be checked against finite differences.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..mdp import greedy
from ..seeding import rng_for
from .env import ErrorDynamicsEnv
from .tabular import DivergenceError, RlConfig, epsilon_greedy


@dataclass(frozen=True)
class NetSpec:
    hidden: tuple = (20, 20, 20, 20, 20)
    lr: float = 1e-3
    batch: int = 200
    replay: int = 50_000
    target_every: int = 500  # gradient steps between target refreshes
    warmup: int = 200  # transitions stored before the first gradient step
    input_scale: tuple | None = None  # per-dimension multipliers applied to e
    reward_scale: float = 1.0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        out["input_scale"] = None if self.input_scale is None else list(self.input_scale)
        return out


class MLP:
    """Fully connected ReLU network with a linear output layer."""

    def __init__(self, sizes, rng: np.random.Generator | None = None):
        self.sizes = list(sizes)
        self.W = []
        self.b = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            lim = 1.0 / np.sqrt(fan_in)
            if rng is None:
                self.W.append(np.zeros((fan_in, fan_out)))
                self.b.append(np.zeros(fan_out))
            else:
                self.W.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
                self.b.append(rng.uniform(-lim, lim, fan_out))

    @property
    def params(self) -> list:
        return [p for pair in zip(self.W, self.b) for p in pair]

    def copy(self) -> "MLP":
        out = MLP(self.sizes)
        out.W = [w.copy() for w in self.W]
        out.b = [b.copy() for b in self.b]
        return out

    def forward(self, X, keep: bool = False):
        h = np.asarray(X, dtype=float)
        acts = [h]
        last = len(self.W) - 1
        for k, (W, b) in enumerate(zip(self.W, self.b)):
            z = h @ W + b
            h = z if k == last else np.maximum(z, 0.0)
            acts.append(h)
        return (h, acts) if keep else h

    def loss_and_grads(self, X, a, y):
        """0.5 * mean (Q(x, a) - y)^2 and its gradient for every parameter."""
        out, acts = self.forward(X, keep=True)
        N = out.shape[0]
        rows = np.arange(N)
        err = out[rows, a] - y
        loss = 0.5 * float(np.mean(err * err))
        g = np.zeros_like(out)
        g[rows, a] = err / N
        grads = []
        for k in range(len(self.W) - 1, -1, -1):
            h_in = acts[k]
            gW = h_in.T @ g
            gb = g.sum(axis=0)
            grads.append((gW, gb))
            if k > 0:
                g = (g @ self.W[k].T) * (acts[k] > 0)
        grads.reverse()
        return loss, [p for pair in grads for p in pair]

    def to_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def load_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        pos = 0
        for p in self.params:
            p[...] = flat[pos : pos + p.size].reshape(p.shape)
            pos += p.size
        if pos != flat.size:
            raise ValueError(f"expected {pos} parameters, got {flat.size}")


class Adam:
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class ReplayBuffer:
    """Ring buffer of (e, a, r, e') transitions."""

    def __init__(self, capacity: int, n: int):
        self.capacity = capacity
        self.e = np.zeros((capacity, n))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.e2 = np.zeros((capacity, n))
        self.size = 0
        self.pos = 0

    def add(self, e, a, r, e2) -> None:
        self.e[self.pos] = e
        self.a[self.pos] = a
        self.r[self.pos] = r
        self.e2[self.pos] = e2
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        idx = rng.choice(self.size, size=batch, replace=False)
        return self.e[idx], self.a[idx], self.r[idx], self.e2[idx]


@dataclass
class NeuralQ:
    net: MLP
    spec: NetSpec
    scale: np.ndarray
    history: list = field(default_factory=list)

    kind = "neural"

    def q_values(self, e) -> np.ndarray:
        return self.net.forward(np.asarray(e, dtype=float) * self.scale)

    def act(self, e, t=None) -> np.ndarray:
        return greedy(self.q_values(np.atleast_2d(e)))


def make_network(n: int, n_actions: int, spec: NetSpec, rng: np.random.Generator) -> MLP:
    return MLP([n, *spec.hidden, n_actions], rng)


def qnlfa_train(
    env: ErrorDynamicsEnv,
    cfg: RlConfig,
    spec: NetSpec = NetSpec(),
    starts=None,
    callback=None,
    every: int = 0,
) -> NeuralQ:
    """DQN-style training: one gradient step per environment step after warm-up."""
    n = env.n
    scale = np.ones(n) if spec.input_scale is None else np.asarray(spec.input_scale, dtype=float)
    rng_env = rng_for(cfg.seed, 0, "env")
    rng_explore = rng_for(cfg.seed, 0, "explore")
    rng_replay = rng_for(cfg.seed, 0, "replay")
    net = make_network(n, env.n_actions, spec, rng_for(cfg.seed, 0, "init"))
    target = net.copy()
    opt = Adam(net.params, spec.lr)
    buf = ReplayBuffer(spec.replay, n)
    learner = NeuralQ(net, spec, scale)
    steps = 0
    for ep in range(cfg.episodes):
        eps = cfg.epsilon(ep)
        e = env.reset(rng_env) if starts is None else starts(rng_env)
        for _ in range(cfg.horizon):
            a = epsilon_greedy(net.forward(e * scale), eps, rng_explore)
            e_next, r, _ = env.step(e, a, rng_env)
            buf.add(e, a, float(r) * spec.reward_scale, e_next)
            e = e_next
            if buf.size < max(spec.warmup, spec.batch):
                continue
            be, ba, br, be2 = buf.sample(spec.batch, rng_replay)
            y = br + cfg.gamma * target.forward(be2 * scale).max(axis=1)
            loss, grads = net.loss_and_grads(be * scale, ba, y)
            if not np.isfinite(loss):
                raise DivergenceError("Q-NLFA loss became non-finite", {"episode": ep, "gradient_steps": steps})
            opt.step(net.params, grads)
            steps += 1
            if steps % spec.target_every == 0:
                target = net.copy()
        if callback is not None and every and ((ep + 1) % every == 0 or ep + 1 == cfg.episodes):
            callback(ep + 1, learner)
    learner.history.append({"gradient_steps": steps, "transitions": buf.size})
    return learner


def finite_difference_check(net: MLP, X, a, y, probes: int = 10, h: float = 1e-5, rng=None):
    """Relative error between analytic and central-difference gradients on ``probes`` parameters."""
    rng = rng if rng is not None else np.random.default_rng(0)
    _, grads = net.loss_and_grads(X, a, y)
    flat_g = np.concatenate([g.ravel() for g in grads])
    base = net.to_flat()
    picks = rng.choice(base.size, size=probes, replace=False)
    out = []
    for j in picks:
        plus = base.copy()
        plus[j] += h
        minus = base.copy()
        minus[j] -= h
        net.load_flat(plus)
        lp, _ = net.loss_and_grads(X, a, y)
        net.load_flat(minus)
        lm, _ = net.loss_and_grads(X, a, y)
        fd = (lp - lm) / (2 * h)
        out.append(abs(fd - flat_g[j]) / max(abs(fd), abs(flat_g[j]), 1e-12))
    net.load_flat(base)
    return picks, np.array(out)
