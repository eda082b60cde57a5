"""Adaptive-moment optimizer with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import DenoiserParams

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def initial(cls, params: DenoiserParams) -> "AdamState":
        return cls(
            step=0,
            m={k: np.zeros_like(t) for k, t in params.tensors.items()},
            v={k: np.zeros_like(t) for k, t in params.tensors.items()},
        )


def optimizer_step(params: DenoiserParams, grads: dict[str, np.ndarray],
                   state: AdamState, learning_rate: float) -> tuple[DenoiserParams, AdamState]:
    """One Adam update; inputs are not mutated."""
    t = state.step + 1
    bc1 = 1.0 - BETA1**t
    bc2 = 1.0 - BETA2**t
    new_tensors = {}
    new_m = {}
    new_v = {}
    for name, p in params.tensors.items():
        g = grads[name].astype(p.dtype)
        m = BETA1 * state.m[name] + (1.0 - BETA1) * g
        v = BETA2 * state.v[name] + (1.0 - BETA2) * g * g
        update = learning_rate * (m / bc1) / (np.sqrt(v / bc2) + EPS)
        new_tensors[name] = p - update.astype(p.dtype)
        new_m[name] = m
        new_v[name] = v
    return DenoiserParams(params.arch, new_tensors), AdamState(step=t, m=new_m, v=new_v)
