"""Elementary differentiable ops: softmax, cross-entropy, one-hot."""

from __future__ import annotations

import numpy as np

from ..errors import InputError, ParameterError

PROB_FLOOR = 1e-12


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax with max-subtraction, along the last axis.

    Accepts a vector or a batch of row vectors; output rows sum to 1
    within 1e-12 and are entrywise positive.
    """
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    x = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InputError("logits must be finite")
    z = x / temperature
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def one_hot(index: int | np.ndarray, num_classes: int) -> np.ndarray:
    """One-hot vector(s) as float64; trailing axis has length num_classes."""
    idx = np.asarray(index, dtype=np.int64)
    flat = idx.reshape(-1)
    if flat.size and (flat.min() < 0 or flat.max() >= num_classes):
        raise InputError(f"class index out of range [0, {num_classes})")
    out = np.zeros((flat.size, num_classes), dtype=np.float64)
    out[np.arange(flat.size), flat] = 1.0
    return out.reshape(idx.shape + (num_classes,))


def cross_entropy(target: np.ndarray, prediction: np.ndarray) -> float:
    """-log p(target class), with the probability floored at 1e-12.

    `target` must be exactly one-hot; `prediction` a probability vector.
    """
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(prediction, dtype=np.float64)
    if t.shape != p.shape:
        raise InputError(f"target shape {t.shape} != prediction shape {p.shape}")
    is_onehot = np.all((t == 0.0) | (t == 1.0)) and np.sum(t) == 1.0
    if not is_onehot:
        raise InputError("target must be one-hot")
    idx = int(np.argmax(t))
    return float(-np.log(max(p[idx], PROB_FLOOR)))
