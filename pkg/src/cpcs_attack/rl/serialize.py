"""Versioned policy artefacts.

Grid, tabular and linear policies are JSON documents. Neural policies are a
binary file: magic, little-endian uint32 header length, a JSON header
(layer sizes, activation, scaling, action set) and the weights as float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..mdp import POLICY_FORMAT, ActionSet, ErrorGrid, GridPolicy
from .linear import LinearQ, make_encoder
from .neural import MLP, NetSpec, NeuralQ
from .tabular import TabularQ

MAGIC = b"CPQN"


@dataclass
class LearnedPolicy:
    """A trained approximator bundled with the action set it indexes."""

    learner: object
    actions: ActionSet

    def act(self, e, t=None):
        return self.learner.act(e, t)


def _json_dump(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True) + "\n")


def save_policy(path, policy, actions: ActionSet | None = None) -> None:
    path = Path(path)
    if isinstance(policy, LearnedPolicy):
        policy, actions = policy.learner, policy.actions
    if isinstance(policy, GridPolicy):
        _json_dump(path, policy.to_dict())
        return
    if actions is None:
        raise ValueError("learned policies need their action set to be saved")
    if isinstance(policy, TabularQ):
        _json_dump(path, {
            "format": POLICY_FORMAT, "kind": "tabular", "grid": policy.grid.to_dict(),
            "actions": actions.to_dict(), "Q": policy.Q.tolist(),
        })
    elif isinstance(policy, LinearQ):
        _json_dump(path, {
            "format": POLICY_FORMAT, "kind": "linear", "encoder": policy.encoder.to_dict(),
            "actions": actions.to_dict(), "theta": policy.theta.tolist(), "normalize": policy.normalize,
        })
    elif isinstance(policy, NeuralQ):
        header = {
            "format": POLICY_FORMAT, "kind": "neural", "sizes": policy.net.sizes, "activation": "relu",
            "dtype": "<f8", "scale": policy.scale.tolist(), "spec": policy.spec.to_dict(), "actions": actions.to_dict(),
        }
        raw = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(policy.net.to_flat().astype("<f8").tobytes())
    else:
        raise TypeError(f"cannot serialise {type(policy).__name__}")


def load_policy(path):
    """Returns a GridPolicy or a LearnedPolicy."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] == MAGIC:
        (hlen,) = struct.unpack("<I", blob[4:8])
        header = json.loads(blob[8 : 8 + hlen])
        if header.get("format") != POLICY_FORMAT:
            raise ValueError(f"unsupported neural policy format {header.get('format')}")
        net = MLP(header["sizes"])
        net.load_flat(np.frombuffer(blob[8 + hlen :], dtype="<f8"))
        spec_d = dict(header["spec"])
        spec_d["hidden"] = tuple(spec_d["hidden"])
        if spec_d.get("input_scale") is not None:
            spec_d["input_scale"] = tuple(spec_d["input_scale"])
        learner = NeuralQ(net, NetSpec(**spec_d), np.asarray(header["scale"]))
        return LearnedPolicy(learner, ActionSet.from_dict(header["actions"]))
    data = json.loads(blob)
    if data.get("format") != POLICY_FORMAT:
        raise ValueError(f"unsupported policy format {data.get('format')}")
    kind = data.get("kind")
    if kind == "grid":
        return GridPolicy.from_dict(data)
    actions = ActionSet.from_dict(data["actions"])
    if kind == "tabular":
        learner = TabularQ(ErrorGrid.from_dict(data["grid"]), actions.size)
        learner.Q = np.asarray(data["Q"], dtype=float)
    elif kind == "linear":
        learner = LinearQ(make_encoder(data["encoder"]), actions.size, data.get("normalize", True))
        learner.theta = np.asarray(data["theta"], dtype=float)
    else:
        raise ValueError(f"unknown policy kind {kind!r}")
    return LearnedPolicy(learner, actions)
