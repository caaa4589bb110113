"""Consensus training labels from multi-rater annotations plus AI predictions.

The estimator is a weighted linear opinion pool: annotator and classifier
weights are their agreement rates with the majority-vote label, the pooled
score vector is normalised, the consensus label is its argmax and the quality
alpha its top entry. Records with alpha <= 0.5 are dropped from the routing
training set. Majority-vote and random-label schemes are kept as baselines.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .numerics import Rng
from .taskgen import MultiRaterDataset

log = logging.getLogger(__name__)

ALPHA_THRESHOLD = 0.5  # strict: records with alpha exactly 0.5 are dropped


@dataclass
class AnnotatorQuality:
    annotator_weights: np.ndarray  # (M,) in [0, 1]
    classifier_weight: float


@dataclass
class ConsensusRecord:
    sample_id: int
    label: int
    alpha: float


@dataclass
class ConsensusDataset:
    """Retained training samples: consensus label + quality + original annotations."""

    ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray  # consensus labels (n,)
    alphas: np.ndarray  # (n,)
    annotations: np.ndarray  # (n, M)
    num_classes: int
    true_labels: np.ndarray | None = None

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def num_annotators(self) -> int:
        return self.annotations.shape[1]


def majority_vote(annotations: np.ndarray, num_classes: int) -> int:
    """Modal class; ties break to the lowest class index."""
    annotations = np.asarray(annotations)
    if annotations.size == 0:
        raise InputError("majority_vote needs at least one annotation")
    counts = np.bincount(annotations, minlength=num_classes)
    return int(np.argmax(counts))


def majority_vote_rows(annotations: np.ndarray, num_classes: int) -> np.ndarray:
    """Row-wise majority vote over (n, M) annotations."""
    n, m = annotations.shape
    counts = np.zeros((n, num_classes), dtype=np.int64)
    for j in range(m):
        np.add.at(counts, (np.arange(n), annotations[:, j]), 1)
    return np.argmax(counts, axis=1)


def random_label(annotations: np.ndarray, rng: Rng) -> int:
    """Uniform choice among the M annotations."""
    annotations = np.asarray(annotations)
    if annotations.size == 0:
        raise InputError("random_label needs at least one annotation")
    return int(annotations[rng.choice(annotations.shape[0])])


def random_label_rows(annotations: np.ndarray, rng: Rng) -> np.ndarray:
    n, m = annotations.shape
    picks = rng.integers(n, m)
    return annotations[np.arange(n), picks]


def estimate_quality(dataset: MultiRaterDataset, ai_predictions: np.ndarray) -> AnnotatorQuality:
    """Per-source quality weights for the opinion pool.

    Primary estimator: moment-matched accuracies from pairwise agreement
    rates. For independent sources with accuracies a_i and symmetric-ish
    errors over K classes, the pairwise agreement g_ij satisfies
    g_ij - 1/K = K/(K-1) * (a_i - 1/K)(a_j - 1/K), so the log excesses
    solve a small least-squares system. The classifier argmax enters as an
    extra source. Weights are the chance-corrected accuracies
    (a - 1/K)/(1 - 1/K), clipped to [0, 1]: a source at chance carries no
    weight, a perfect one carries 1, and a strong classifier can outweigh
    (and override) a weak annotator majority in the pooled score.

    Falls back to chance-corrected agreement with the majority-vote label
    when the system degenerates (fewer than three sources, or a source at
    or below chance agreement with another).
    """
    ai_predictions = np.asarray(ai_predictions, dtype=np.float64)
    if ai_predictions.shape[0] != len(dataset):
        raise InputError("predictions must cover all samples")
    k = dataset.num_classes
    m = dataset.num_annotators
    sources = np.column_stack([dataset.annotations, np.argmax(ai_predictions, axis=1)])
    s = m + 1

    if s >= 3:
        excess = np.empty((s, s))
        ok = True
        for i in range(s):
            for j in range(i + 1, s):
                g = (sources[:, i] == sources[:, j]).mean()
                x = (g - 1.0 / k) * (k - 1.0) / k
                if x <= 1e-6:
                    ok = False
                excess[i, j] = excess[j, i] = x
        if ok:
            pairs = [(i, j) for i in range(s) for j in range(i + 1, s)]
            a_mat = np.zeros((len(pairs), s))
            rhs = np.empty(len(pairs))
            for row, (i, j) in enumerate(pairs):
                a_mat[row, i] = a_mat[row, j] = 1.0
                rhs[row] = np.log(excess[i, j])
            t, *_ = np.linalg.lstsq(a_mat, rhs, rcond=None)
            acc = 1.0 / k + np.exp(t)
            w = np.clip((acc - 1.0 / k) / (1.0 - 1.0 / k), 0.0, 1.0)
            return AnnotatorQuality(w[:m], float(w[m]))

    mv = majority_vote_rows(dataset.annotations, k)
    agree = (dataset.annotations == mv[:, None]).mean(axis=0)
    clf_agree = (np.argmax(ai_predictions, axis=1) == mv).mean()
    weights = np.clip((agree - 1.0 / k) / (1.0 - 1.0 / k), 0.0, 1.0)
    clf = float(np.clip((clf_agree - 1.0 / k) / (1.0 - 1.0 / k), 0.0, 1.0))
    return AnnotatorQuality(weights, clf)


def pooled_consensus(
    annotations: np.ndarray,
    ai_prediction: np.ndarray,
    quality: AnnotatorQuality,
    num_classes: int,
    sample_id: int = 0,
) -> ConsensusRecord:
    """Weighted pool of classifier probabilities and annotator votes.

    Falls back to majority vote with alpha = modal fraction when every
    weight is zero.
    """
    score = quality.classifier_weight * np.asarray(ai_prediction, dtype=np.float64)
    score = score.copy()
    for j, a in enumerate(np.asarray(annotations)):
        score[a] += quality.annotator_weights[j]
    total = score.sum()
    if total == 0.0:
        label = majority_vote(annotations, num_classes)
        counts = np.bincount(annotations, minlength=num_classes)
        return ConsensusRecord(sample_id, label, counts[label] / len(annotations))
    score /= total
    label = int(np.argmax(score))  # argmax tie-breaks to the lowest index
    return ConsensusRecord(sample_id, label, float(score[label]))


def _pooled_scores(dataset: MultiRaterDataset, ai_predictions: np.ndarray, quality: AnnotatorQuality):
    n = len(dataset)
    scores = quality.classifier_weight * np.asarray(ai_predictions, dtype=np.float64).copy()
    for j in range(dataset.num_annotators):
        np.add.at(
            scores,
            (np.arange(n), dataset.annotations[:, j]),
            quality.annotator_weights[j],
        )
    return scores


def build_consensus_dataset(
    dataset: MultiRaterDataset, ai_predictions: np.ndarray
) -> ConsensusDataset:
    """Per-sample pooled consensus, retaining only records with alpha > 0.5."""
    quality = estimate_quality(dataset, ai_predictions)
    scores = _pooled_scores(dataset, ai_predictions, quality)
    totals = scores.sum(axis=1)
    n = len(dataset)

    labels = np.empty(n, dtype=np.int64)
    alphas = np.empty(n)
    degenerate = totals == 0.0
    if np.any(degenerate):
        mv = majority_vote_rows(dataset.annotations[degenerate], dataset.num_classes)
        labels[degenerate] = mv
        frac = (dataset.annotations[degenerate] == mv[:, None]).mean(axis=1)
        alphas[degenerate] = frac
    ok = ~degenerate
    norm = scores[ok] / totals[ok, None]
    labels[ok] = np.argmax(norm, axis=1)
    alphas[ok] = norm[np.arange(norm.shape[0]), labels[ok]]

    keep = alphas > ALPHA_THRESHOLD
    kept = int(keep.sum())
    if kept < n / 2:
        log.warning(
            "consensus filter kept only %d/%d samples (alpha > %.1f)", kept, n, ALPHA_THRESHOLD
        )
    return ConsensusDataset(
        ids=dataset.ids[keep].copy(),
        features=dataset.features[keep].copy(),
        labels=labels[keep],
        alphas=alphas[keep],
        annotations=dataset.annotations[keep].copy(),
        num_classes=dataset.num_classes,
        true_labels=None if dataset.true_labels is None else dataset.true_labels[keep].copy(),
    )


def labeled_consensus_dataset(
    dataset: MultiRaterDataset, labels: np.ndarray, alphas: np.ndarray | None = None
) -> ConsensusDataset:
    """Wrap explicit training labels (majority-vote / random baselines); keeps all samples."""
    n = len(dataset)
    return ConsensusDataset(
        ids=dataset.ids.copy(),
        features=dataset.features.copy(),
        labels=np.asarray(labels, dtype=np.int64),
        alphas=np.ones(n) if alphas is None else np.asarray(alphas, dtype=np.float64),
        annotations=dataset.annotations.copy(),
        num_classes=dataset.num_classes,
        true_labels=None if dataset.true_labels is None else dataset.true_labels.copy(),
    )


def save_consensus(path, dataset: ConsensusDataset) -> None:
    """JSON Lines {"id", "consensus_label", "alpha"}."""
    import json

    with open(path, "w") as fh:
        for i in range(len(dataset)):
            fh.write(
                json.dumps(
                    {
                        "id": int(dataset.ids[i]),
                        "consensus_label": int(dataset.labels[i]),
                        "alpha": float(dataset.alphas[i]),
                    }
                )
                + "\n"
            )


def load_consensus(path, source: MultiRaterDataset) -> ConsensusDataset:
    """Rejoin a saved consensus file with its source multi-rater dataset."""
    import json

    from .errors import ParseError

    index = {int(v): i for i, v in enumerate(source.ids)}
    rows, labels, alphas = [], [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid consensus JSON: {exc.msg}", line=lineno) from exc
        for field in ("id", "consensus_label", "alpha"):
            if field not in rec:
                raise ParseError(f"record missing '{field}'", line=lineno)
        if rec["id"] not in index:
            raise ValidationError(f"line {lineno}: id {rec['id']} not in source dataset")
        rows.append(index[rec["id"]])
        labels.append(rec["consensus_label"])
        alphas.append(rec["alpha"])
    rows = np.asarray(rows, dtype=np.int64)
    return ConsensusDataset(
        ids=source.ids[rows].copy(),
        features=source.features[rows].copy(),
        labels=np.asarray(labels, dtype=np.int64),
        alphas=np.asarray(alphas, dtype=np.float64),
        annotations=source.annotations[rows].copy(),
        num_classes=source.num_classes,
        true_labels=None if source.true_labels is None else source.true_labels[rows].copy(),
    )


def consensus_accuracy(dataset: ConsensusDataset) -> float:
    """Fraction of retained consensus labels matching hidden truth."""
    if dataset.true_labels is None:
        raise InputError("consensus accuracy needs hidden true labels")
    return float((dataset.labels == dataset.true_labels).mean())
