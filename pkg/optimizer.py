# optimizer.py
"""Adam with bias correction over a dict of named parameter arrays."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from errors import InputShapeError


@dataclass
class AdamSettings:
    step_size: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8


@dataclass
class AdamState:
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState, cfg,
              step_sizes: Optional[Mapping[str, float]] = None):
    """One in-place Adam update; ``cfg`` provides step_size and the adam_* constants.

    ``step_sizes`` overrides the step size per parameter name.
    Returns ``(params, state)``.
    """
    for key, value in params.items():
        if key not in grads:
            raise InputShapeError(f"missing gradient for parameter '{key}'")
        if np.shape(grads[key]) != np.shape(value):
            raise InputShapeError(
                f"gradient shape {np.shape(grads[key])} != parameter shape {np.shape(value)} for '{key}'")

    beta1 = cfg.adam_beta1
    beta2 = cfg.adam_beta2
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step

    for key, value in params.items():
        g = np.asarray(grads[key], dtype=np.float64)
        if key not in state.first_moment:
            state.first_moment[key] = np.zeros_like(value)
            state.second_moment[key] = np.zeros_like(value)
        m = state.first_moment[key]
        v = state.second_moment[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)

        lr = cfg.step_size if step_sizes is None else step_sizes.get(key, cfg.step_size)
        denom = np.sqrt(v / bc2) + cfg.adam_epsilon
        value -= (lr / bc1) * m / denom
    return params, state
