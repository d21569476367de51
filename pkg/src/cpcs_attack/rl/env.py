"""Error-dynamics environment for model-free attack learning.

The state is the Kalman estimation error e[t]. One step draws plant and
sensor noise, forms the residual under the chosen injection, runs the
detector and mitigation, and returns the next error with reward ||e'||^2.
The environment is stateless: callers carry e, which makes batched
evaluation a single numpy call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..estimation import DetectorConfig, MitigationStrategy, detect
from ..mdp import ActionSet
from ..system_model import NoiseSpec, SteadyStateKalman, SystemModel, gaussian, sample_noise


@dataclass
class ErrorDynamicsEnv:
    model: SystemModel
    ssk: SteadyStateKalman
    detector: DetectorConfig
    mitigation: MitigationStrategy
    actions: ActionSet
    horizon: int = 50
    process_noise: NoiseSpec | None = None
    measurement_noise: NoiseSpec | None = None
    start: str = "steady"  # "steady": e[0] ~ N(0, P_e); "zero": e[0] = 0

    def __post_init__(self):
        if self.actions.m != self.model.m:
            raise ValueError(f"actions have dimension {self.actions.m}, model has m = {self.model.m}")
        self._pn = self.process_noise or gaussian(self.model.Q)
        self._mn = self.measurement_noise or gaussian(self.model.R)
        self._start = gaussian(self.ssk.P_e)
        self._CA = self.model.C @ self.model.A

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def n_actions(self) -> int:
        return self.actions.size

    def reset(self, rng: np.random.Generator, batch: int | None = None) -> np.ndarray:
        if self.start == "zero":
            return np.zeros((self.n,) if batch is None else (batch, self.n))
        return sample_noise(self._start, rng, batch)

    def step(self, e, action, rng: np.random.Generator):
        """Advance one step. ``action`` holds action indices (scalar or (batch,)).

        Returns (e_next, reward, alarm).
        """
        e = np.asarray(e, dtype=float)
        batch = None if e.ndim == 1 else e.shape[0]
        a = self.actions.vectors[action]
        w = sample_noise(self._pn, rng, batch)
        v = sample_noise(self._mn, rng, batch)
        r = e @ self._CA.T + w @ self.model.C.T + v + a
        _, i = detect(r, self.detector)
        kind = self.mitigation.kind
        if kind == "model_only":
            quiet = e @ self.ssk.A_K.T + w @ self.ssk.W_K.T - (a + v) @ self.ssk.K.T
            skipped = e @ self.model.A.T + w
            alarm = np.asarray(i, dtype=bool)
            e_next = np.where(alarm[..., None] if alarm.ndim else alarm, skipped, quiet)
        else:
            delta = a
            if kind == "noisy" and self.mitigation.sigma_mit > 0:
                delta = a + self.mitigation.sigma_mit * rng.standard_normal(np.shape(a))
            i_f = np.asarray(i, dtype=float)
            resid = a - (i_f[..., None] if i_f.ndim else i_f) * delta
            e_next = e @ self.ssk.A_K.T + w @ self.ssk.W_K.T - (resid + v) @ self.ssk.K.T
        reward = np.sum(e_next * e_next, axis=-1)
        return e_next, reward, i
