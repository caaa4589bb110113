"""Synthetic classification tasks and simulated annotator pools.

Produces the multi-rater training data the rest of the pipeline consumes:
feature vectors with hidden true labels, plus M noisy annotations per sample
drawn from per-annotator noise models (symmetric, confusion-matrix, or
instance-dependent).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, ParameterError, ParseError, ValidationError
from .numerics import Rng

log = logging.getLogger(__name__)


@dataclass
class LabeledDataset:
    ids: np.ndarray  # (n,) int64, unique
    features: np.ndarray  # (n, dim) float64
    labels: np.ndarray  # (n,) int64 in [0, num_classes)
    num_classes: int

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class MultiRaterDataset:
    """Samples with M annotations each; true labels optional (simulation only)."""

    ids: np.ndarray  # (n,)
    features: np.ndarray  # (n, dim)
    annotations: np.ndarray  # (n, M) int64 class indices
    num_classes: int
    true_labels: np.ndarray | None = None  # (n,) or None

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_annotators(self) -> int:
        return self.annotations.shape[1]


# --- annotator models ---------------------------------------------------


@dataclass
class SymmetricAnnotator:
    """With prob 1-rate keep the true label, else uniform over other classes."""

    noise_rate: float

    def __post_init__(self):
        if not 0.0 <= self.noise_rate < 1.0:
            raise ParameterError(f"noise_rate must be in [0, 1), got {self.noise_rate}")


@dataclass
class ConfusionMatrixAnnotator:
    """Annotation sampled from the row of a row-stochastic transition matrix."""

    matrix: np.ndarray  # (K, K)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ParameterError(f"transition matrix must be square, got {m.shape}")
        if np.any(m < 0) or not np.allclose(m.sum(axis=1), 1.0, atol=1e-9):
            raise ParameterError("transition matrix rows must be nonnegative and sum to 1")
        self.matrix = m


@dataclass
class InstanceDependentAnnotator:
    """Flip probability grows with <projection, x>, normalised to mean base_rate.

    rho_i = base_rate * sigmoid(<w, x_i>) / mean_j sigmoid(<w, x_j>), clamped
    to [0, 0.95]; flip target uniform over the other classes.
    """

    projection: np.ndarray  # (dim,)
    base_rate: float

    def __post_init__(self):
        if not 0.0 <= self.base_rate < 1.0:
            raise ParameterError(f"base_rate must be in [0, 1), got {self.base_rate}")
        self.projection = np.asarray(self.projection, dtype=np.float64)


AnnotatorModel = SymmetricAnnotator | ConfusionMatrixAnnotator | InstanceDependentAnnotator


def make_instance_dependent(dim: int, base_rate: float, rng: Rng) -> InstanceDependentAnnotator:
    """Fresh instance-dependent annotator with its own random projection."""
    return InstanceDependentAnnotator(rng.normal(dim), base_rate)


# --- task generation ----------------------------------------------------


def _simplex_means(num_classes: int, dim: int, separation: float) -> np.ndarray:
    """Class means at regular-simplex vertices with pairwise distance = separation."""
    if dim < num_classes - 1:
        raise ParameterError(
            f"dim {dim} < num_classes-1 = {num_classes - 1}: simplex embedding impossible"
        )
    # Rows of I - J/K span a (K-1)-dim subspace with pairwise distance sqrt(2).
    centered = np.eye(num_classes) - 1.0 / num_classes
    q, _ = np.linalg.qr(centered[:, : num_classes - 1])
    coords = centered @ q[:, : num_classes - 1]
    coords *= separation / np.sqrt(2.0)
    means = np.zeros((num_classes, dim))
    means[:, : num_classes - 1] = coords
    return means


def make_gaussian_task(
    num_classes: int,
    dim: int,
    n_train: int,
    n_test: int,
    class_separation: float,
    rng: Rng,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Balanced isotropic-Gaussian classes at simplex-vertex means.

    class_separation is the pairwise distance between class means (0 is
    allowed and makes the classes indistinguishable). Train and test are
    drawn from disjoint fresh samples with disjoint ids.
    """
    if num_classes < 2:
        raise ParameterError(f"num_classes must be >= 2, got {num_classes}")
    if class_separation < 0:
        raise ParameterError(f"class_separation must be >= 0, got {class_separation}")
    means = _simplex_means(num_classes, dim, class_separation)

    def draw(n: int, id_offset: int) -> LabeledDataset:
        labels = np.arange(n) % num_classes
        feats = means[labels] + rng.normal((n, dim))
        order = rng.permutation(n)
        return LabeledDataset(
            ids=np.arange(id_offset, id_offset + n, dtype=np.int64),
            features=feats[order],
            labels=labels[order].astype(np.int64),
            num_classes=num_classes,
        )

    train = draw(n_train, 0)
    test = draw(n_test, n_train)
    return train, test


def class_means_of(dataset: LabeledDataset) -> np.ndarray:
    """Empirical per-class feature means (nearest-mean oracle support)."""
    means = np.zeros((dataset.num_classes, dataset.dim))
    for c in range(dataset.num_classes):
        means[c] = dataset.features[dataset.labels == c].mean(axis=0)
    return means


def nearest_mean_predict(means: np.ndarray, features: np.ndarray) -> np.ndarray:
    d2 = ((features[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


# --- annotation ---------------------------------------------------------


def _flip_uniform_other(labels: np.ndarray, flips: np.ndarray, num_classes: int, rng: Rng):
    """Where flips, replace the label by a uniform draw over the other classes."""
    out = labels.copy()
    n = labels.shape[0]
    offs = rng.integers(n, num_classes - 1)
    wrong = offs + (offs >= labels)  # skip the true class
    out[flips] = wrong[flips]
    return out


def annotate(dataset: LabeledDataset, annotator: AnnotatorModel, rng: Rng) -> np.ndarray:
    """One annotation per sample, as class indices (n,)."""
    y = dataset.labels
    n = len(dataset)
    k = dataset.num_classes
    if isinstance(annotator, SymmetricAnnotator):
        flips = rng.uniform(n) < annotator.noise_rate
        return _flip_uniform_other(y, flips, k, rng)
    if isinstance(annotator, ConfusionMatrixAnnotator):
        cdf = np.cumsum(annotator.matrix, axis=1)
        u = rng.uniform(n)
        rows = cdf[y]
        # index = #{i : cdf_i <= u}; <= keeps zero-probability cells unreachable
        return (rows <= u[:, None]).sum(axis=1).astype(np.int64).clip(0, k - 1)
    if isinstance(annotator, InstanceDependentAnnotator):
        s = 1.0 / (1.0 + np.exp(-dataset.features @ annotator.projection))
        rho = annotator.base_rate * s / s.mean()
        rho = np.clip(rho, 0.0, 0.95)
        flips = rng.uniform(n) < rho
        return _flip_uniform_other(y, flips, k, rng)
    raise ParameterError(f"unknown annotator model {annotator!r}")


def build_multirater(
    dataset: LabeledDataset, annotators: list[AnnotatorModel], rng: Rng
) -> MultiRaterDataset:
    """M independent annotations per sample, column order = annotator index."""
    if not annotators:
        raise ParameterError("annotator list must be nonempty")
    cols = [annotate(dataset, a, rng) for a in annotators]
    return MultiRaterDataset(
        ids=dataset.ids.copy(),
        features=dataset.features.copy(),
        annotations=np.stack(cols, axis=1),
        num_classes=dataset.num_classes,
        true_labels=dataset.labels.copy(),
    )


def estimate_transition_matrices(dataset: MultiRaterDataset) -> np.ndarray:
    """Per-annotator empirical label-transition matrices, Laplace-smoothed (+1).

    Row = true class, column = annotated class. Requires hidden true labels.
    """
    if dataset.true_labels is None:
        raise InputError("transition estimation requires true labels")
    k = dataset.num_classes
    m = dataset.num_annotators
    mats = np.ones((m, k, k))  # +1 smoothing
    for j in range(m):
        np.add.at(mats[j], (dataset.true_labels, dataset.annotations[:, j]), 1.0)
    mats /= mats.sum(axis=2, keepdims=True)
    return mats


def synthesize_user_pool(base: MultiRaterDataset, target_m: int, rng: Rng) -> MultiRaterDataset:
    """Grow the pool to target_m synthetic users.

    Each synthetic user annotates each sample by first picking one of the
    base annotators' estimated transition matrices uniformly at random, then
    sampling from that matrix's row for the sample's true class.
    """
    if target_m <= base.num_annotators:
        raise ParameterError(
            f"target_m {target_m} must exceed base annotator count {base.num_annotators}"
        )
    mats = estimate_transition_matrices(base)
    n = len(base)
    k = base.num_classes
    cols = []
    for _ in range(target_m):
        pick = rng.integers(n, mats.shape[0])
        rows = mats[pick, base.true_labels]  # (n, K)
        u = rng.uniform(n)
        cdf = np.cumsum(rows, axis=1)
        cols.append((cdf <= u[:, None]).sum(axis=1).astype(np.int64).clip(0, k - 1))
    return MultiRaterDataset(
        ids=base.ids.copy(),
        features=base.features.copy(),
        annotations=np.stack(cols, axis=1),
        num_classes=k,
        true_labels=base.true_labels.copy(),
    )


# --- serialization ------------------------------------------------------


def save_dataset(path: str | Path, dataset: MultiRaterDataset) -> None:
    """JSON Lines: header {num_classes, M, dim}, then one record per sample."""
    with open(path, "w") as fh:
        fh.write(
            json.dumps(
                {
                    "num_classes": dataset.num_classes,
                    "M": dataset.num_annotators,
                    "dim": dataset.dim,
                }
            )
            + "\n"
        )
        for i in range(len(dataset)):
            rec = {
                "id": int(dataset.ids[i]),
                "features": dataset.features[i].tolist(),
                "annotations": dataset.annotations[i].tolist(),
                "true_label": None
                if dataset.true_labels is None
                else int(dataset.true_labels[i]),
            }
            fh.write(json.dumps(rec) + "\n")


def load_dataset(path: str | Path) -> MultiRaterDataset:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ParseError("empty dataset file", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid header JSON: {exc.msg}", line=1) from exc
    for field in ("num_classes", "M", "dim"):
        if field not in header:
            raise ParseError(f"header missing '{field}'", line=1)
    k, m, dim = int(header["num_classes"]), int(header["M"]), int(header["dim"])

    ids, feats, anns, truths = [], [], [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid record JSON: {exc.msg}", line=lineno) from exc
        for field in ("id", "features", "annotations", "true_label"):
            if field not in rec:
                raise ParseError(f"record missing '{field}'", line=lineno)
        if len(rec["annotations"]) != m:
            raise ValidationError(
                f"line {lineno}: annotations length {len(rec['annotations'])} != M {m}"
            )
        if len(rec["features"]) != dim:
            raise ValidationError(
                f"line {lineno}: features length {len(rec['features'])} != dim {dim}"
            )
        ids.append(rec["id"])
        feats.append(rec["features"])
        anns.append(rec["annotations"])
        truths.append(rec["true_label"])

    has_truth = all(t is not None for t in truths) and truths
    return MultiRaterDataset(
        ids=np.asarray(ids, dtype=np.int64),
        features=np.asarray(feats, dtype=np.float64),
        annotations=np.asarray(anns, dtype=np.int64),
        num_classes=k,
        true_labels=np.asarray(truths, dtype=np.int64) if has_truth else None,
    )
