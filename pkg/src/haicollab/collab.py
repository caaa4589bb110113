"""Learned routing between AI-alone, AI+k-user, and k-user-only decisions.

A selection MLP maps features to 2M+1 mode logits (AI alone, complement with
1..M users, defer to 1..M users). Training samples a hard mode by
straight-through Gumbel-Softmax, assembles the collaboration input for that
mode (AI block plus the first k shuffled user annotations, unused blocks
zeroed), feeds it to a collaboration MLP, and minimises cross-entropy against
the consensus label plus lambda times the expected label cost of the
predicted mode distribution. The pre-trained base classifier stays frozen
throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .basemodel import (
    BaseClassifier,
    load_base,
    normalize_ai_rows,
    predict_proba_batch,
    save_base,
)
from .consensus import ConsensusDataset
from .errors import InputError, ParameterError
from .numerics import (
    MlpParameters,
    Rng,
    cross_entropy,
    init_mlp,
    init_optimizer,
    mlp_backward_batch,
    mlp_forward_batch,
    mlp_from_dict,
    mlp_to_dict,
    one_hot,
    sgd_step,
    softmax,
)
from .taskgen import MultiRaterDataset

PROB_FLOOR = 1e-12


# --- modes ----------------------------------------------------------------


@dataclass(frozen=True)
class CollaborationMode:
    """One of ai_alone, complement(k), defer(k) with k in [1, M]."""

    kind: str  # "ai" | "complement" | "defer"
    k: int = 0

    def __post_init__(self):
        if self.kind not in ("ai", "complement", "defer"):
            raise ParameterError(f"unknown mode kind {self.kind!r}")
        if self.kind == "ai" and self.k != 0:
            raise ParameterError("ai mode carries no users")
        if self.kind != "ai" and self.k < 1:
            raise ParameterError("complement/defer need k >= 1")

    @property
    def cost(self) -> int:
        return self.k

    @property
    def uses_ai(self) -> bool:
        return self.kind in ("ai", "complement")

    def index(self, num_users: int) -> int:
        """Position in the 2M+1 selection vector (0-based)."""
        if self.k > num_users:
            raise ParameterError(f"k={self.k} exceeds pool size M={num_users}")
        if self.kind == "ai":
            return 0
        if self.kind == "complement":
            return self.k
        return num_users + self.k

    @staticmethod
    def from_index(index: int, num_users: int) -> "CollaborationMode":
        if not 0 <= index <= 2 * num_users:
            raise ParameterError(f"mode index {index} out of range for M={num_users}")
        if index == 0:
            return CollaborationMode("ai")
        if index <= num_users:
            return CollaborationMode("complement", index)
        return CollaborationMode("defer", index - num_users)

    @property
    def label(self) -> str:
        return "ai_alone" if self.kind == "ai" else f"{self.kind}_{self.k}"


def mode_labels(num_users: int) -> list[str]:
    return [CollaborationMode.from_index(i, num_users).label for i in range(2 * num_users + 1)]


def cost_vector(num_users: int) -> np.ndarray:
    """Label cost per selection index: [0, 1..M, 1..M]."""
    return np.concatenate(
        [[0.0], np.arange(1, num_users + 1, dtype=np.float64), np.arange(1, num_users + 1, dtype=np.float64)]
    )


def expected_cost(selection_probs: np.ndarray) -> float:
    """Expected number of user labels under a selection distribution."""
    p = np.asarray(selection_probs, dtype=np.float64)
    if p.ndim != 1 or p.size < 3 or p.size % 2 == 0:
        raise InputError(f"selection vector must have odd length 2M+1 >= 3, got {p.shape}")
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise InputError("selection vector must lie on the simplex")
    m = (p.size - 1) // 2
    return float(p @ cost_vector(m))


# --- assembly -------------------------------------------------------------


def shuffle_annotations(annotations: np.ndarray, rng: Rng) -> np.ndarray:
    """Uniform random permutation of the user annotations (multiset preserved)."""
    annotations = np.asarray(annotations)
    order = rng.permutation(annotations.shape[0])
    return annotations[order]


def assemble_input(
    mode: CollaborationMode,
    ai_prediction: np.ndarray,
    shuffled_annotations: np.ndarray,
) -> np.ndarray:
    """Concatenated (M+1) blocks of length K for the collaboration MLP.

    Block 0 is the AI prediction (zeros for defer modes); blocks 1..k are the
    first k shuffled annotations as one-hots; all later blocks stay zero.
    shuffled_annotations is (M,) class indices or (M, K) one-hot rows.
    """
    ai = np.asarray(ai_prediction, dtype=np.float64)
    k_classes = ai.shape[0]
    ann = np.asarray(shuffled_annotations)
    if ann.ndim == 1:
        ann = one_hot(ann, k_classes)
    num_users = ann.shape[0]
    if mode.k > num_users:
        raise ParameterError(f"mode needs {mode.k} users but pool has {num_users}")
    out = np.zeros((num_users + 1) * k_classes)
    if mode.uses_ai:
        out[:k_classes] = ai
    for i in range(1, mode.k + 1):
        out[i * k_classes : (i + 1) * k_classes] = ann[i - 1]
    return out


def _assemble_hard_rows(mode_idx, ai_rows, ann_onehot):
    """Batched assemble_input for per-row hard mode indices."""
    b, m, k = ann_onehot.shape
    kc = np.where(mode_idx <= m, mode_idx, mode_idx - m)  # users consumed
    uses_ai = mode_idx <= m
    out = np.zeros((b, (m + 1) * k))
    out[:, :k] = ai_rows * uses_ai[:, None]
    for i in range(1, m + 1):
        out[:, i * k : (i + 1) * k] = ann_onehot[:, i - 1] * (kc >= i)[:, None]
    return out


def _assemble_soft_rows(weights, ai_rows, ann_onehot):
    """Weighted mixture over all 2M+1 assemblies (the relaxed forward).

    Exploits the block structure: the AI block collects the weight of all
    AI-using modes; user block i collects the weight of modes with k >= i.
    """
    b, m, k = ann_onehot.shape
    ai_w = weights[:, : m + 1].sum(axis=1)
    out = np.zeros((b, (m + 1) * k))
    out[:, :k] = ai_rows * ai_w[:, None]
    for i in range(1, m + 1):
        w_i = weights[:, i : m + 1].sum(axis=1) + weights[:, m + i :].sum(axis=1)
        out[:, i * k : (i + 1) * k] = ann_onehot[:, i - 1] * w_i[:, None]
    return out


def _selection_grad_from_input_grad(d_input, ai_rows, ann_onehot):
    """d(loss)/d(selection weights) given d(loss)/d(collaboration input).

    The assembly is linear in the selection weights, so the gradient for
    mode j is <d_input, assembly_j>; computed via the same block structure.
    """
    b, m, k = ann_onehot.shape
    a0 = (d_input[:, :k] * ai_rows).sum(axis=1)
    u = np.empty((b, m))
    for i in range(1, m + 1):
        u[:, i - 1] = (d_input[:, i * k : (i + 1) * k] * ann_onehot[:, i - 1]).sum(axis=1)
    prefix = np.cumsum(u, axis=1)
    d_sel = np.empty((b, 2 * m + 1))
    d_sel[:, 0] = a0
    d_sel[:, 1 : m + 1] = a0[:, None] + prefix
    d_sel[:, m + 1 :] = prefix
    return d_sel


# --- model ----------------------------------------------------------------


@dataclass
class SelectionModule:
    params: MlpParameters  # dim -> hidden -> 2M+1
    temperature: float = 5.0


@dataclass
class CollaborationModule:
    params: MlpParameters  # (M+1)*K -> hidden -> K


@dataclass
class CollabModel:
    base: BaseClassifier
    selector: SelectionModule
    collaborator: CollaborationModule
    num_users: int
    num_classes: int

    def __post_init__(self):
        m, k = self.num_users, self.num_classes
        if self.selector.params.out_dim != 2 * m + 1:
            raise ParameterError(
                f"selector must emit 2M+1={2 * m + 1} logits, got {self.selector.params.out_dim}"
            )
        if self.collaborator.params.in_dim != (m + 1) * k:
            raise ParameterError(
                f"collaborator input must be (M+1)K={(m + 1) * k}, got {self.collaborator.params.in_dim}"
            )


@dataclass
class TrainConfig:
    lambda_cost: float = 0.01
    epochs: int = 200
    learning_rate: float = 0.05  # initial; decays per lr_schedule
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 256
    selection_temperature: float = 5.0
    ai_norm_temperature: float = 0.5
    # deterministic sharpening of the AI block during training matches the
    # test-time transform; True swaps in the stochastic Gumbel sample
    ai_norm_stochastic: bool = False
    hidden: int = 64
    seed: int = 0
    lr_schedule: str = "cosine"  # "cosine" | "constant"

    def __post_init__(self):
        if self.lambda_cost < 0:
            raise ParameterError(f"lambda must be >= 0, got {self.lambda_cost}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ParameterError(f"lr_schedule must be cosine or constant, got {self.lr_schedule!r}")
        for name in ("epochs", "learning_rate", "batch_size", "selection_temperature", "ai_norm_temperature", "hidden"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")

    def lr_at(self, epoch: int) -> float:
        if self.lr_schedule == "constant":
            return self.learning_rate
        return self.learning_rate * 0.5 * (1.0 + np.cos(np.pi * epoch / self.epochs))


def loss(
    final_probs: np.ndarray,
    consensus_onehot: np.ndarray,
    selection_soft: np.ndarray,
    lambda_cost: float,
) -> float:
    """Cross-entropy against the consensus label plus lambda * expected cost."""
    return cross_entropy(consensus_onehot, final_probs) + lambda_cost * expected_cost(
        selection_soft
    )


# --- per-sample forward (training semantics) --------------------------------


@dataclass
class ForwardTrainResult:
    final_probs: np.ndarray
    selection_soft: np.ndarray  # Gumbel-soft sample (straight-through path)
    selection_hard: np.ndarray
    selection_dist: np.ndarray  # noiseless softmax(logits): the cost input
    mode: CollaborationMode
    collab_input: np.ndarray


def forward_train(
    model: CollabModel,
    features: np.ndarray,
    annotations: np.ndarray,
    rng: Rng | None = None,
    *,
    shuffle_keys: np.ndarray | None = None,
    gumbel_ai: np.ndarray | None = None,
    gumbel_sel: np.ndarray | None = None,
    hard: bool = True,
    ai_stochastic: bool = False,
) -> ForwardTrainResult:
    """One training-mode forward pass for a single sample.

    Draw order when rng is supplied: shuffle keys (M), AI-normalisation
    Gumbel (K, only when ai_stochastic), selection Gumbel (2M+1). Pass the
    noise tensors explicitly to run under common random numbers; hard=False
    keeps the relaxed soft mixture as the collaboration input (the
    surrogate that gradient checks differentiate).
    """
    m, k = model.num_users, model.num_classes
    x = np.asarray(features, dtype=np.float64)
    ann = np.asarray(annotations)
    if ann.shape[0] != m:
        raise InputError(f"expected {m} annotations, got {ann.shape[0]}")
    if shuffle_keys is None:
        shuffle_keys = rng.uniform(m)
    if ai_stochastic and gumbel_ai is None:
        gumbel_ai = rng.gumbel(k)
    if gumbel_sel is None:
        gumbel_sel = rng.gumbel(2 * m + 1)

    order = np.argsort(shuffle_keys, kind="stable")
    ann_onehot = one_hot(ann[order], k)[None, :, :]

    base_probs = predict_proba_batch(model.base, x[None, :])
    if ai_stochastic:
        ai_rows = normalize_ai_rows(
            base_probs, model.base.normalization_temperature, "train", noise=gumbel_ai[None, :]
        )
    else:
        ai_rows = normalize_ai_rows(base_probs, model.base.normalization_temperature, "test")

    sel_logits, _ = mlp_forward_batch(model.selector.params, x[None, :])
    soft = softmax(sel_logits[0] + gumbel_sel, model.selector.temperature)
    dist = softmax(sel_logits[0])
    hard_idx = int(np.argmax(soft))
    hard_onehot = one_hot(hard_idx, 2 * m + 1)

    if hard:
        collab_in = _assemble_hard_rows(np.array([hard_idx]), ai_rows, ann_onehot)
    else:
        collab_in = _assemble_soft_rows(soft[None, :], ai_rows, ann_onehot)
    col_logits, _ = mlp_forward_batch(model.collaborator.params, collab_in)
    final = softmax(col_logits[0])
    return ForwardTrainResult(
        final, soft, hard_onehot, dist, CollaborationMode.from_index(hard_idx, m), collab_in[0]
    )


# --- batched training -------------------------------------------------------


def _batch_forward_backward(
    selector: SelectionModule,
    collaborator: CollaborationModule,
    x: np.ndarray,
    base_probs: np.ndarray,
    annotations: np.ndarray,
    targets: np.ndarray,
    lambda_cost: float,
    ai_temperature: float,
    num_classes: int,
    rng: Rng | None,
    *,
    noise: tuple | None = None,
    hard: bool = True,
    ai_stochastic: bool = False,
):
    """Mean loss and gradients for one mini-batch.

    Cross-entropy gradients reach the selector through the soft Gumbel
    sample (straight-through when hard=True); the cost term is computed on
    the noiseless selection distribution softmax(logits), which is already
    differentiable and needs no reparameterisation. Returns
    (loss, selector grads, collaborator grads).
    """
    b = x.shape[0]
    m = annotations.shape[1]
    k = num_classes
    if noise is None:
        shuffle_keys = rng.uniform2d(b, m)
        g_ai = rng.gumbel((b, k)) if ai_stochastic else None
        g_sel = rng.gumbel((b, 2 * m + 1))
    else:
        shuffle_keys, g_ai, g_sel = noise

    order = np.argsort(shuffle_keys, axis=1, kind="stable")
    ann_shuf = np.take_along_axis(annotations, order, axis=1)
    ann_onehot = one_hot(ann_shuf, k)

    if ai_stochastic:
        ai_rows = normalize_ai_rows(base_probs, ai_temperature, "train", noise=g_ai)
    else:
        ai_rows = normalize_ai_rows(base_probs, ai_temperature, "test")

    sel_logits, sel_cache = mlp_forward_batch(selector.params, x)
    soft = softmax(sel_logits + g_sel, selector.temperature)
    dist = softmax(sel_logits)
    hard_idx = np.argmax(soft, axis=1)

    if hard:
        collab_in = _assemble_hard_rows(hard_idx, ai_rows, ann_onehot)
    else:
        collab_in = _assemble_soft_rows(soft, ai_rows, ann_onehot)
    col_logits, col_cache = mlp_forward_batch(collaborator.params, collab_in)
    probs = softmax(col_logits)

    y_onehot = one_hot(targets, k)
    ce = -np.log(np.clip(probs[np.arange(b), targets], PROB_FLOOR, None))
    cvec = cost_vector(m)
    cost_terms = dist @ cvec
    total_loss = float(np.mean(ce + lambda_cost * cost_terms))

    d_logits = (probs - y_onehot) / b
    col_grads, d_collab_in = mlp_backward_batch(collaborator.params, col_cache, d_logits)

    # CE path: straight-through, via the Gumbel-soft sample at tau_sel
    d_soft = _selection_grad_from_input_grad(d_collab_in, ai_rows, ann_onehot)
    inner = (d_soft * soft).sum(axis=1, keepdims=True)
    d_sel_logits = soft * (d_soft - inner) / selector.temperature
    # cost path: direct, via the noiseless distribution at tau=1
    d_dist = (lambda_cost / b) * cvec[None, :]
    inner_cost = (d_dist * dist).sum(axis=1, keepdims=True)
    d_sel_logits = d_sel_logits + dist * (d_dist - inner_cost)
    sel_grads, _ = mlp_backward_batch(selector.params, sel_cache, d_sel_logits)

    return total_loss, sel_grads, col_grads


def init_collab_model(
    base: BaseClassifier, num_users: int, hidden: int, rng: Rng, selection_temperature: float = 5.0
) -> CollabModel:
    k = base.num_classes
    selector = SelectionModule(
        init_mlp((base.dim, hidden, 2 * num_users + 1), rng), selection_temperature
    )
    collaborator = CollaborationModule(init_mlp(((num_users + 1) * k, hidden, k), rng))
    return CollabModel(base, selector, collaborator, num_users, k)


def train(dataset: ConsensusDataset, base: BaseClassifier, config: TrainConfig) -> CollabModel:
    """Joint SGD over selector and collaborator; the base stays frozen."""
    if len(dataset) == 0:
        raise InputError("consensus dataset is empty")
    rng = Rng(config.seed)
    m = dataset.num_annotators
    model = init_collab_model(base, m, config.hidden, rng, config.selection_temperature)
    sel_opt = init_optimizer(
        model.selector.params, config.learning_rate, config.momentum, config.weight_decay
    )
    col_opt = init_optimizer(
        model.collaborator.params, config.learning_rate, config.momentum, config.weight_decay
    )

    base_probs_all = predict_proba_batch(base, dataset.features)
    n = len(dataset)
    for epoch in range(config.epochs):
        sel_opt.learning_rate = col_opt.learning_rate = config.lr_at(epoch)
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            _, sel_grads, col_grads = _batch_forward_backward(
                model.selector,
                model.collaborator,
                dataset.features[idx],
                base_probs_all[idx],
                dataset.annotations[idx],
                dataset.labels[idx],
                config.lambda_cost,
                config.ai_norm_temperature,
                dataset.num_classes,
                rng,
                ai_stochastic=config.ai_norm_stochastic,
            )
            sgd_step(model.selector.params, sel_grads, sel_opt)
            sgd_step(model.collaborator.params, col_grads, col_opt)
    return model


# --- inference --------------------------------------------------------------


class AnnotationProvider(Protocol):
    def request(self, sample_id: int, k: int) -> np.ndarray:
        """Return k one-hot-able class indices for the sample; called lazily."""
        ...


class RecordedAnnotationProvider:
    """Serves recorded annotations in a fresh shuffled order per request."""

    def __init__(self, dataset: MultiRaterDataset, rng: Rng):
        self._annotations = dataset.annotations
        self._index = {int(v): i for i, v in enumerate(dataset.ids)}
        self._rng = rng
        self.requests = 0

    def request(self, sample_id: int, k: int) -> np.ndarray:
        row = self._index[int(sample_id)]
        order = self._rng.permutation(self._annotations.shape[1])
        self.requests += k
        return self._annotations[row, order[:k]]


@dataclass
class InferenceTrace:
    sample_id: int
    mode: CollaborationMode
    selection_probs: np.ndarray
    ai_prediction: int
    human_labels: list[int]
    system_prediction: int
    labels_consumed: int
    true_label: int | None = None


def selection_distribution(model: CollabModel, features: np.ndarray) -> np.ndarray:
    """Noiseless mode distribution at test time (softmax of selector logits)."""
    logits, _ = mlp_forward_batch(model.selector.params, np.asarray(features, dtype=np.float64))
    return softmax(logits)


def infer(
    model: CollabModel,
    features: np.ndarray,
    provider: AnnotationProvider,
    sample_id: int = 0,
) -> InferenceTrace:
    """Route one sample; only the selected mode's labels are requested."""
    x = np.asarray(features, dtype=np.float64)
    sel_probs = selection_distribution(model, x[None, :])[0]
    mode = CollaborationMode.from_index(int(np.argmax(sel_probs)), model.num_users)

    base_probs = predict_proba_batch(model.base, x[None, :])[0]
    ai_argmax = int(np.argmax(base_probs))

    if mode.kind == "ai":
        return InferenceTrace(
            sample_id, mode, sel_probs, ai_argmax, [], ai_argmax, 0
        )

    labels = np.asarray(provider.request(sample_id, mode.k))
    if labels.shape[0] != mode.k:
        raise InputError(
            f"provider returned {labels.shape[0]} labels for sample {sample_id}, need {mode.k}"
        )
    final = resolve_with_labels(model, x, mode, labels)
    return InferenceTrace(
        sample_id, mode, sel_probs, ai_argmax, [int(v) for v in labels], final, mode.cost
    )


def resolve_with_labels(
    model: CollabModel, features: np.ndarray, mode: CollaborationMode, labels: np.ndarray
) -> int:
    """Collaboration-module prediction for a chosen mode and concrete labels."""
    x = np.asarray(features, dtype=np.float64)
    base_probs = predict_proba_batch(model.base, x[None, :])[0]
    ai_norm = normalize_ai_rows(
        base_probs[None, :], model.base.normalization_temperature, "test"
    )[0]
    padded = np.zeros(model.num_users, dtype=np.int64)
    padded[: mode.k] = np.asarray(labels, dtype=np.int64)
    collab_in = assemble_input(mode, ai_norm, padded)
    # one-hot padding beyond k is zeroed by assemble_input
    logits, _ = mlp_forward_batch(model.collaborator.params, collab_in[None, :])
    return int(np.argmax(softmax(logits[0])))


# --- bundle io ---------------------------------------------------------------


def save_bundle(directory: str | Path, model: CollabModel, extra: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_base(d / "base.json", model.base)
    (d / "selector.json").write_text(
        json.dumps(mlp_to_dict(model.selector.params, {"temperature": model.selector.temperature}))
    )
    (d / "collaborator.json").write_text(json.dumps(mlp_to_dict(model.collaborator.params)))
    config = {
        "M": model.num_users,
        "num_classes": model.num_classes,
        "dim": model.base.dim,
    }
    config.update(extra or {})
    (d / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True))


def load_bundle(directory: str | Path) -> tuple[CollabModel, dict]:
    d = Path(directory)
    config = json.loads((d / "config.json").read_text())
    base = load_base(d / "base.json")
    sel_params, sel_meta = mlp_from_dict(json.loads((d / "selector.json").read_text()))
    col_params, _ = mlp_from_dict(json.loads((d / "collaborator.json").read_text()))
    model = CollabModel(
        base,
        SelectionModule(sel_params, float(sel_meta.get("temperature", 5.0))),
        CollaborationModule(col_params),
        int(config["M"]),
        int(config["num_classes"]),
    )
    return model, config


def write_traces(path: str | Path, traces: list[InferenceTrace]) -> None:
    """JSON Lines trace export, one record per sample."""
    with open(path, "w") as fh:
        for t in traces:
            fh.write(
                json.dumps(
                    {
                        "id": t.sample_id,
                        "human_labels": t.human_labels,
                        "ai_prediction": t.ai_prediction,
                        "selection_probs": [float(v) for v in t.selection_probs],
                        "mode": t.mode.label,
                        "system_prediction": t.system_prediction,
                        "true_label": t.true_label,
                    }
                )
                + "\n"
            )
