"""Pre-training and serving of the AI classifier.

Two recipes over the same noisy-annotation stream (a fresh random annotation
per sample each epoch):

- plain_noisy: cross-entropy on the noisy labels, final-epoch weights.
- lnl_proxy: label smoothing 0.1 plus selection of the epoch checkpoint with
  the best majority-vote accuracy on a held-out 10% split. Stands in for the
  heavyweight noisy-label pre-training pipelines at desk scale.

Predictions can be sharpened/normalised at temperature 0.5 before entering
the collaboration input: stochastic Gumbel-Softmax in train mode,
deterministic temperature sharpening in test mode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, ParameterError, ShapeError
from .numerics import (
    MlpParameters,
    Rng,
    gumbel_softmax_rows,
    init_mlp,
    init_optimizer,
    mlp_backward_batch,
    mlp_forward_batch,
    mlp_from_dict,
    mlp_to_dict,
    sgd_step,
    softmax,
)
from .consensus import majority_vote_rows
from .taskgen import MultiRaterDataset

RECIPES = ("plain_noisy", "lnl_proxy")


@dataclass
class BaseClassifier:
    params: MlpParameters
    num_classes: int
    dim: int
    recipe: str
    normalization_temperature: float = 0.5


def predict_proba_batch(model: BaseClassifier, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.shape[1] != model.dim:
        raise ShapeError(f"feature dim {features.shape[1]} != model dim {model.dim}")
    logits, _ = mlp_forward_batch(model.params, features)
    return softmax(logits)


def predict_proba(model: BaseClassifier, features: np.ndarray) -> np.ndarray:
    return predict_proba_batch(model, np.asarray(features, dtype=np.float64)[None, :])[0]


def normalize_ai_prediction(
    probabilities: np.ndarray,
    temperature: float = 0.5,
    mode: str = "test",
    rng: Rng | None = None,
) -> np.ndarray:
    """Sharpen a probability vector at the given temperature.

    train mode draws a Gumbel-Softmax sample over the log-probabilities;
    test mode is the deterministic softmax(log p / temperature), which
    preserves the argmax.
    """
    return normalize_ai_rows(
        np.asarray(probabilities, dtype=np.float64)[None, :], temperature, mode, rng
    )[0]


def normalize_ai_rows(
    probabilities: np.ndarray,
    temperature: float = 0.5,
    mode: str = "test",
    rng: Rng | None = None,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    if mode not in ("train", "test"):
        raise ParameterError(f"mode must be 'train' or 'test', got {mode!r}")
    p = np.asarray(probabilities, dtype=np.float64)
    logp = np.log(np.clip(p, 1e-12, None))
    if mode == "test":
        return softmax(logp, temperature)
    soft, _ = gumbel_softmax_rows(logp, temperature, rng=rng, noise=noise)
    return soft


def _smoothed_targets(labels: np.ndarray, num_classes: int, smoothing: float) -> np.ndarray:
    t = np.full((labels.shape[0], num_classes), smoothing / num_classes)
    t[np.arange(labels.shape[0]), labels] += 1.0 - smoothing
    return t


def _epoch(params, opt, features, labels, num_classes, smoothing, batch_size, rng):
    n = features.shape[0]
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        x = features[idx]
        targets = _smoothed_targets(labels[idx], num_classes, smoothing)
        logits, cache = mlp_forward_batch(params, x)
        probs = softmax(logits)
        grad_logits = (probs - targets) / x.shape[0]
        grads, _ = mlp_backward_batch(params, cache, grad_logits)
        sgd_step(params, grads, opt)


def train_base(
    dataset: MultiRaterDataset,
    recipe: str = "lnl_proxy",
    epochs: int = 40,
    rng: Rng | None = None,
    hidden: int = 64,
    learning_rate: float = 0.05,
    momentum: float = 0.9,
    weight_decay: float = 0.0005,
    batch_size: int = 256,
    label_smoothing: float = 0.1,
    holdout_fraction: float = 0.1,
) -> BaseClassifier:
    """Train the base classifier on randomly-picked annotations per epoch."""
    if recipe not in RECIPES:
        raise ParameterError(f"recipe must be one of {RECIPES}, got {recipe!r}")
    if len(dataset) == 0:
        raise InputError("dataset must be nonempty")
    if rng is None:
        raise ParameterError("an explicit Rng is required")

    k = dataset.num_classes
    params = init_mlp((dataset.dim, hidden, k), rng)
    opt = init_optimizer(params, learning_rate, momentum, weight_decay)

    if recipe == "lnl_proxy":
        split = rng.permutation(len(dataset))
        n_hold = max(1, int(round(holdout_fraction * len(dataset))))
        hold, fit = split[:n_hold], split[n_hold:]
        hold_mv = majority_vote_rows(dataset.annotations[hold], k)
        smoothing = label_smoothing
    else:
        fit = np.arange(len(dataset))
        hold = hold_mv = None
        smoothing = 0.0

    fit_features = dataset.features[fit]
    fit_annotations = dataset.annotations[fit]
    m = dataset.num_annotators

    best_params = None
    best_acc = -1.0
    for _ in range(epochs):
        # fresh random annotation per sample, each epoch
        picks = rng.integers(fit_features.shape[0], m)
        labels = fit_annotations[np.arange(fit_features.shape[0]), picks]
        _epoch(params, opt, fit_features, labels, k, smoothing, batch_size, rng)
        if recipe == "lnl_proxy":
            logits, _ = mlp_forward_batch(params, dataset.features[hold])
            acc = float((np.argmax(logits, axis=1) == hold_mv).mean())
            if acc > best_acc:
                best_acc = acc
                best_params = params.copy()

    final = best_params if recipe == "lnl_proxy" else params
    return BaseClassifier(final, k, dataset.dim, recipe)


def save_base(path: str | Path, model: BaseClassifier) -> None:
    meta = {
        "recipe": model.recipe,
        "temperature": model.normalization_temperature,
        "num_classes": model.num_classes,
        "dim": model.dim,
    }
    Path(path).write_text(json.dumps(mlp_to_dict(model.params, meta)))


def load_base(path: str | Path) -> BaseClassifier:
    doc = json.loads(Path(path).read_text())
    params, meta = mlp_from_dict(doc)
    return BaseClassifier(
        params,
        int(meta["num_classes"]),
        int(meta["dim"]),
        str(meta["recipe"]),
        float(meta.get("temperature", 0.5)),
    )
