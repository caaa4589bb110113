"""Gumbel-Softmax sampling for discrete selection.

The straight-through convention used everywhere in this package: the hard
one-hot is the forward value, and consumers backpropagate as if the output
were hard + (soft - stop_gradient(soft)), i.e. gradients flow through the
soft sample. This module only produces the (soft, hard) pair; the consumer
owns the gradient wiring.
"""

from __future__ import annotations

import numpy as np

from .ops import one_hot, softmax
from .rng import Rng


def gumbel_softmax_sample(
    logits: np.ndarray,
    temperature: float,
    rng: Rng | None = None,
    noise: np.ndarray | None = None,
):
    """One draw: soft = softmax((logits + G)/tau), hard = one-hot argmax(soft).

    Pass pre-drawn standard-Gumbel `noise` instead of `rng` to run under
    common random numbers (gradient checks, batched equivalence tests).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise is required")
        noise = rng.gumbel(logits.shape)
    soft = softmax(logits + noise, temperature)
    hard = one_hot(int(np.argmax(soft)), logits.shape[-1])
    return soft, hard


def gumbel_softmax_rows(
    logits: np.ndarray,
    temperature: float,
    rng: Rng | None = None,
    noise: np.ndarray | None = None,
):
    """Row-wise (soft, hard_index) over a batch of logit rows."""
    logits = np.asarray(logits, dtype=np.float64)
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise is required")
        noise = rng.gumbel(logits.shape)
    soft = softmax(logits + noise, temperature)
    hard_idx = np.argmax(soft, axis=-1)
    return soft, hard_idx
