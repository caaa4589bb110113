"""Small fully-connected nets: parameters, forward, reverse-mode backward.

Only what the artifact needs: chains of affine layers with ReLU between them
(none after the last), float64 throughout. Weights are (out_dim, in_dim),
row-major; activations are row vectors, batches are (n, dim) matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError, ShapeError
from .rng import Rng


@dataclass
class Layer:
    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    def copy(self) -> "Layer":
        return Layer(self.weight.copy(), self.bias.copy())


@dataclass
class MlpParameters:
    layers: list[Layer]

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def copy(self) -> "MlpParameters":
        return MlpParameters([l.copy() for l in self.layers])


def init_mlp(sizes: tuple[int, ...] | list[int], rng: Rng) -> MlpParameters:
    """He-normal weights, zero biases, for dims sizes[0] -> ... -> sizes[-1]."""
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = rng.normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        layers.append(Layer(w, np.zeros(fan_out)))
    return MlpParameters(layers)


def zeros_like_params(params: MlpParameters) -> list[Layer]:
    return [Layer(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in params.layers]


def affine_forward(x: np.ndarray, layer: Layer) -> np.ndarray:
    """W x + b for a single vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (layer.weight.shape[1],):
        raise ShapeError(
            f"input length {x.shape} incompatible with weight {layer.weight.shape}"
        )
    return layer.weight @ x + layer.bias


def mlp_forward_batch(params: MlpParameters, x: np.ndarray):
    """Forward over a batch (n, in_dim); returns (output (n, out_dim), cache).

    The cache holds the layer inputs and pre-activations needed by
    mlp_backward_batch.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(f"batch shape {x.shape} incompatible with input dim {params.in_dim}")
    inputs = []
    pre_acts = []
    h = x
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        inputs.append(h)
        z = h @ layer.weight.T + layer.bias
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite activation at layer {i}")
        pre_acts.append(z)
        h = np.maximum(z, 0.0) if i < last else z
    return h, (inputs, pre_acts)


def mlp_backward_batch(params: MlpParameters, cache, upstream: np.ndarray):
    """Reverse mode through the cached forward pass.

    upstream is d(loss)/d(output), shape (n, out_dim). Returns (grads, dx)
    where grads mirrors params.layers and dx is d(loss)/d(input).
    """
    inputs, pre_acts = cache
    grads = [None] * len(params.layers)
    delta = np.asarray(upstream, dtype=np.float64)
    last = len(params.layers) - 1
    for i in range(last, -1, -1):
        layer = params.layers[i]
        if i < last:
            delta = delta * (pre_acts[i] > 0.0)
        grads[i] = Layer(delta.T @ inputs[i], delta.sum(axis=0))
        delta = delta @ layer.weight
    return grads, delta


def mlp_forward(params: MlpParameters, x: np.ndarray) -> np.ndarray:
    """Forward for a single vector."""
    out, _ = mlp_forward_batch(params, np.asarray(x, dtype=np.float64)[None, :])
    return out[0]


def mlp_forward_backward(x: np.ndarray, params: MlpParameters, upstream_grad: np.ndarray):
    """Single-vector forward plus gradients of <upstream_grad, output>.

    Returns (output, grads, input_grad).
    """
    out, cache = mlp_forward_batch(params, np.asarray(x, dtype=np.float64)[None, :])
    grads, dx = mlp_backward_batch(params, cache, np.asarray(upstream_grad)[None, :])
    return out[0], grads, dx[0]


@dataclass
class FdReport:
    passed: bool
    max_rel_error: float
    worst_location: str

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}: max relative error {self.max_rel_error:.3e} at {self.worst_location}"


def finite_difference_check(
    loss_and_grads,
    params: MlpParameters,
    tolerance: float = 1e-5,
    step: float = 1e-5,
) -> FdReport:
    """Compare analytic gradients with central finite differences.

    loss_and_grads(params) must return (scalar loss, grads shaped like
    params.layers) and be deterministic in params. Relative error uses a
    small absolute floor in the denominator so exactly-zero gradient pairs
    compare clean.
    """
    _, grads = loss_and_grads(params)
    max_rel = 0.0
    worst = "none"

    def loss_at(p):
        return loss_and_grads(p)[0]

    for li, layer in enumerate(params.layers):
        for name in ("weight", "bias"):
            arr = getattr(layer, name)
            g = getattr(grads[li], name)
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + step
                lp = loss_at(params)
                flat[j] = orig - step
                lm = loss_at(params)
                flat[j] = orig
                fd = (lp - lm) / (2.0 * step)
                denom = max(abs(fd), abs(gflat[j]), 1e-8)
                rel = abs(fd - gflat[j]) / denom
                if rel > max_rel:
                    max_rel = rel
                    worst = f"layer {li} {name}[{j}]"
    return FdReport(max_rel < tolerance, max_rel, worst)
