"""SGD with momentum and decoupled-from-nothing weight decay (added to grad)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError, ParameterError, ShapeError
from .mlp import Layer, MlpParameters, zeros_like_params


@dataclass
class OptimizerState:
    velocity: list[Layer]
    learning_rate: float
    momentum: float
    weight_decay: float


def init_optimizer(
    params: MlpParameters,
    learning_rate: float,
    momentum: float = 0.9,
    weight_decay: float = 0.0005,
) -> OptimizerState:
    if not 0.0 <= momentum < 1.0:
        raise ParameterError(f"momentum must be in [0, 1), got {momentum}")
    if learning_rate <= 0:
        raise ParameterError(f"learning_rate must be > 0, got {learning_rate}")
    return OptimizerState(zeros_like_params(params), learning_rate, momentum, weight_decay)


def sgd_step(params: MlpParameters, grads: list[Layer], state: OptimizerState):
    """v <- momentum*v + grad + wd*param;  param <- param - lr*v.  In place."""
    for layer, g, v in zip(params.layers, grads, state.velocity):
        for name in ("weight", "bias"):
            p = getattr(layer, name)
            gr = getattr(g, name)
            vel = getattr(v, name)
            if gr.shape != p.shape:
                raise ShapeError(f"grad shape {gr.shape} != param shape {p.shape}")
            if not np.all(np.isfinite(gr)):
                raise NumericError("non-finite gradient")
            vel *= state.momentum
            vel += gr + state.weight_decay * p
            p -= state.learning_rate * vel
    return params, state
