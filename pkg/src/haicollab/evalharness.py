"""Cost-accuracy evaluation: curves, lambda sweeps, ablations, pool scaling.

Accuracy is always measured against hidden simulation truth; cost is the
number of user labels the router actually consumed, cross-checked against
the annotation provider's request counter (double-entry).
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .basemodel import BaseClassifier, predict_proba_batch, train_base
from .collab import (
    CollabModel,
    InferenceTrace,
    RecordedAnnotationProvider,
    TrainConfig,
    infer,
    train,
)
from .consensus import (
    ConsensusDataset,
    build_consensus_dataset,
    labeled_consensus_dataset,
    majority_vote_rows,
    random_label_rows,
)
from .errors import HaiCollabError, InputError, ParameterError
from .numerics import Rng, derive_seed, float_key
from .taskgen import MultiRaterDataset, synthesize_user_pool

log = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = (0.0, 1e-3, 3e-3, 1e-2, 3e-2, 6e-2, 1e-1, 1.0)

ABLATION_VARIANTS = (
    "full",
    "no_lnl",
    "single_user_aggregation",
    "single_user_random",
    "consensus_majority",
    "consensus_random",
)

# seed-derivation tags, so every stage gets an independent stream
_TAG_BASE = 11
_TAG_TRAIN = 12
_TAG_EVAL = 13
_TAG_DATA = 14
_TAG_POOL = 15


@dataclass
class CostAccuracyPoint:
    lambda_cost: float
    total_cost: int
    cost_per_sample: float
    accuracy: float
    mode_histogram: dict[str, int]
    n: int


@dataclass
class AblationSpec:
    variant: str

    def __post_init__(self):
        if self.variant not in ABLATION_VARIANTS:
            raise ParameterError(
                f"variant must be one of {ABLATION_VARIANTS}, got {self.variant!r}"
            )


def evaluate(
    model: CollabModel,
    test: MultiRaterDataset,
    rng: Rng,
    lambda_cost: float = float("nan"),
    collect_traces: bool = False,
) -> tuple[CostAccuracyPoint, list[InferenceTrace]]:
    """Route every test sample through a recorded-annotation provider."""
    if test.true_labels is None:
        raise InputError("evaluation needs hidden true labels")
    provider = RecordedAnnotationProvider(test, rng)
    histogram: dict[str, int] = {}
    total_cost = 0
    correct = 0
    traces: list[InferenceTrace] = []
    for i in range(len(test)):
        trace = infer(model, test.features[i], provider, sample_id=int(test.ids[i]))
        trace.true_label = int(test.true_labels[i])
        total_cost += trace.labels_consumed
        correct += trace.system_prediction == trace.true_label
        histogram[trace.mode.label] = histogram.get(trace.mode.label, 0) + 1
        if collect_traces:
            traces.append(trace)
    if total_cost != provider.requests:
        raise HaiCollabError(
            f"cost double-entry violated: {total_cost} counted vs {provider.requests} requested"
        )
    point = CostAccuracyPoint(
        lambda_cost=lambda_cost,
        total_cost=total_cost,
        cost_per_sample=total_cost / len(test),
        accuracy=correct / len(test),
        mode_histogram=histogram,
        n=len(test),
    )
    return point, traces


def train_and_evaluate(
    consensus: ConsensusDataset,
    base: BaseClassifier,
    test: MultiRaterDataset,
    config: TrainConfig,
    lambda_cost: float,
    master_seed: int,
) -> tuple[CostAccuracyPoint, CollabModel]:
    """One lambda point; run seeds derive from (master_seed, lambda bits)."""
    cfg = replace(
        config,
        lambda_cost=lambda_cost,
        seed=derive_seed(master_seed, _TAG_TRAIN, float_key(lambda_cost)),
    )
    model = train(consensus, base, cfg)
    eval_rng = Rng(derive_seed(master_seed, _TAG_EVAL, float_key(lambda_cost)))
    point, _ = evaluate(model, test, eval_rng, lambda_cost=lambda_cost)
    return point, model


def _sweep_worker(payload):
    consensus, base, test, config, lam, master_seed = payload
    point, _ = train_and_evaluate(consensus, base, test, config, lam, master_seed)
    return point


def sweep_lambda(
    lambdas,
    consensus: ConsensusDataset,
    base: BaseClassifier,
    test: MultiRaterDataset,
    config: TrainConfig,
    master_seed: int,
    jobs: int = 1,
) -> list[CostAccuracyPoint]:
    """One trained router per lambda, identical data/seeds across the grid."""
    if len(lambdas) == 0:
        raise ParameterError("lambda grid must be nonempty")
    payloads = [(consensus, base, test, config, float(l), master_seed) for l in lambdas]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_sweep_worker, payloads))
    else:
        points = [_sweep_worker(p) for p in payloads]
    return sorted(points, key=lambda p: p.lambda_cost)


# --- ablations --------------------------------------------------------------


def _single_user_train(train_mr: MultiRaterDataset, how: str, rng: Rng) -> MultiRaterDataset:
    if how == "aggregation":
        ann = majority_vote_rows(train_mr.annotations, train_mr.num_classes)
    else:
        ann = random_label_rows(train_mr.annotations, rng)
    return MultiRaterDataset(
        ids=train_mr.ids.copy(),
        features=train_mr.features.copy(),
        annotations=ann[:, None],
        num_classes=train_mr.num_classes,
        true_labels=None if train_mr.true_labels is None else train_mr.true_labels.copy(),
    )


def _single_user_test(test_mr: MultiRaterDataset, rng: Rng) -> MultiRaterDataset:
    ann = random_label_rows(test_mr.annotations, rng)
    return MultiRaterDataset(
        ids=test_mr.ids.copy(),
        features=test_mr.features.copy(),
        annotations=ann[:, None],
        num_classes=test_mr.num_classes,
        true_labels=None if test_mr.true_labels is None else test_mr.true_labels.copy(),
    )


def run_pipeline(
    train_mr: MultiRaterDataset,
    test_mr: MultiRaterDataset,
    lambdas,
    config: TrainConfig,
    master_seed: int,
    recipe: str = "lnl_proxy",
    base_epochs: int = 40,
    base_hidden: int = 64,
    consensus_scheme: str = "pooled",
    jobs: int = 1,
) -> tuple[list[CostAccuracyPoint], BaseClassifier, ConsensusDataset]:
    """Base training + consensus labelling + lambda sweep, in memory."""
    base_rng = Rng(derive_seed(master_seed, _TAG_BASE))
    base = train_base(
        train_mr, recipe=recipe, epochs=base_epochs, rng=base_rng, hidden=base_hidden
    )
    ai_probs = predict_proba_batch(base, train_mr.features)
    if consensus_scheme == "pooled":
        cons = build_consensus_dataset(train_mr, ai_probs)
    elif consensus_scheme == "majority":
        cons = labeled_consensus_dataset(
            train_mr, majority_vote_rows(train_mr.annotations, train_mr.num_classes)
        )
    elif consensus_scheme == "random":
        rng = Rng(derive_seed(master_seed, _TAG_DATA, 1))
        cons = labeled_consensus_dataset(train_mr, random_label_rows(train_mr.annotations, rng))
    else:
        raise ParameterError(f"unknown consensus scheme {consensus_scheme!r}")
    points = sweep_lambda(lambdas, cons, base, test_mr, config, master_seed, jobs=jobs)
    return points, base, cons


def run_ablation(
    spec: AblationSpec,
    train_mr: MultiRaterDataset,
    test_mr: MultiRaterDataset,
    lambdas,
    config: TrainConfig,
    master_seed: int,
    base_epochs: int = 40,
    base_hidden: int = 64,
    jobs: int = 1,
) -> list[CostAccuracyPoint]:
    """Curve for one ablation variant over the lambda grid."""
    recipe = "plain_noisy" if spec.variant == "no_lnl" else "lnl_proxy"
    scheme = {
        "consensus_majority": "majority",
        "consensus_random": "random",
    }.get(spec.variant, "pooled")
    if spec.variant in ("single_user_aggregation", "single_user_random"):
        how = "aggregation" if spec.variant == "single_user_aggregation" else "random"
        rng = Rng(derive_seed(master_seed, _TAG_DATA, 2))
        train_mr = _single_user_train(train_mr, how, rng)
        test_mr = _single_user_test(test_mr, Rng(derive_seed(master_seed, _TAG_DATA, 3)))
    points, _, _ = run_pipeline(
        train_mr,
        test_mr,
        lambdas,
        config,
        master_seed,
        recipe=recipe,
        base_epochs=base_epochs,
        base_hidden=base_hidden,
        consensus_scheme=scheme,
        jobs=jobs,
    )
    return points


# --- selective-prediction confidence baseline --------------------------------


def sp_baseline(
    base: BaseClassifier,
    test: MultiRaterDataset,
    budgets,
    rng: Rng,
) -> list[tuple[int, float]]:
    """Confidence-threshold baseline.

    Samples are ranked by rejection score 1 - max class probability; for a
    budget b, the b highest-scoring samples take one randomly drawn human
    label each and the rest keep the AI argmax.
    """
    if test.true_labels is None:
        raise InputError("sp_baseline needs hidden true labels")
    n = len(test)
    for b in budgets:
        if b > n or b < 0:
            raise ParameterError(f"budget {b} out of range [0, {n}]")
    probs = predict_proba_batch(base, test.features)
    ai_pred = np.argmax(probs, axis=1)
    scores = 1.0 - probs.max(axis=1)
    order = np.argsort(-scores, kind="stable")
    human = random_label_rows(test.annotations, rng)
    out = []
    for b in budgets:
        pred = ai_pred.copy()
        take = order[: int(b)]
        pred[take] = human[take]
        out.append((int(b), float((pred == test.true_labels).mean())))
    return out


# --- user-pool scaling --------------------------------------------------------


@dataclass
class ScaleResult:
    num_users: int
    points: list[CostAccuracyPoint]
    train_seconds: float  # mean wall-clock of one router training at this M


def scale_user_pool(
    target_ms,
    train_mr: MultiRaterDataset,
    test_mr: MultiRaterDataset,
    lambdas,
    config: TrainConfig,
    master_seed: int,
    base_epochs: int = 40,
    base_hidden: int = 64,
) -> list[ScaleResult]:
    """Accuracy/cost and training wall-clock as the user pool grows.

    Pools larger than the base M are synthesised from per-annotator
    transition matrices estimated on the data; the base M passes through
    unchanged.
    """
    results = []
    for m in target_ms:
        if m == train_mr.num_annotators:
            tr, te = train_mr, test_mr
        else:
            tr = synthesize_user_pool(train_mr, m, Rng(derive_seed(master_seed, _TAG_POOL, m, 0)))
            te = synthesize_user_pool(test_mr, m, Rng(derive_seed(master_seed, _TAG_POOL, m, 1)))
        base = train_base(
            tr,
            recipe="lnl_proxy",
            epochs=base_epochs,
            rng=Rng(derive_seed(master_seed, _TAG_BASE, m)),
            hidden=base_hidden,
        )
        cons = build_consensus_dataset(tr, predict_proba_batch(base, tr.features))
        points = []
        elapsed = []
        for lam in lambdas:
            t0 = time.perf_counter()
            cfg = replace(
                config,
                lambda_cost=float(lam),
                seed=derive_seed(master_seed, _TAG_TRAIN, m, float_key(float(lam))),
            )
            model = train(cons, base, cfg)
            elapsed.append(time.perf_counter() - t0)
            eval_rng = Rng(derive_seed(master_seed, _TAG_EVAL, m, float_key(float(lam))))
            point, _ = evaluate(model, te, eval_rng, lambda_cost=float(lam))
            points.append(point)
        results.append(ScaleResult(m, points, float(np.mean(elapsed))))
    return results


def accuracy_at_cost(points: list[CostAccuracyPoint], cost_per_sample: float) -> float:
    """Linear interpolation of accuracy over realized cost, clamped at the ends."""
    pts = sorted(points, key=lambda p: p.cost_per_sample)
    costs = np.array([p.cost_per_sample for p in pts])
    accs = np.array([p.accuracy for p in pts])
    return float(np.interp(cost_per_sample, costs, accs))


def matched_cost_gaps(
    curve_a: list[CostAccuracyPoint],
    curve_b: list[CostAccuracyPoint],
    levels: int = 3,
) -> tuple[list[float], list[float]]:
    """Accuracy gaps (a - b) at interior cost levels of the curves' overlap."""
    lo = max(min(p.cost_per_sample for p in curve_a), min(p.cost_per_sample for p in curve_b))
    hi = min(max(p.cost_per_sample for p in curve_a), max(p.cost_per_sample for p in curve_b))
    pts = list(np.linspace(lo, hi, levels + 2)[1:-1])
    return pts, [accuracy_at_cost(curve_a, c) - accuracy_at_cost(curve_b, c) for c in pts]


# --- export -------------------------------------------------------------------


def curve_header(num_users: int) -> list[str]:
    cols = ["lambda", "total_cost", "cost_per_sample", "accuracy", "n_ai"]
    cols += [f"n_comp_{k}" for k in range(1, num_users + 1)]
    cols += [f"n_defer_{k}" for k in range(1, num_users + 1)]
    return cols


def write_curve_csv(path: str | Path, points: list[CostAccuracyPoint], num_users: int) -> None:
    from .collab import mode_labels

    labels = mode_labels(num_users)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(curve_header(num_users))
        for p in points:
            row = [repr(p.lambda_cost), p.total_cost, repr(p.cost_per_sample), repr(p.accuracy)]
            row += [p.mode_histogram.get(lbl, 0) for lbl in labels]
            writer.writerow(row)


def write_scale_csv(path: str | Path, results: list[ScaleResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["M", "lambda", "total_cost", "cost_per_sample", "accuracy", "train_seconds"]
        )
        for res in results:
            for p in res.points:
                writer.writerow(
                    [
                        res.num_users,
                        repr(p.lambda_cost),
                        p.total_cost,
                        repr(p.cost_per_sample),
                        repr(p.accuracy),
                        repr(res.train_seconds),
                    ]
                )


def write_sp_csv(path: str | Path, rows: list[tuple[int, float]], n: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["budget", "cost_per_sample", "accuracy"])
        for b, acc in rows:
            writer.writerow([b, repr(b / n), repr(acc)])


def write_manifest(path: str | Path, command: str, config: dict, seed: int, artifacts) -> None:
    """Deterministic manifest: resolved config + seed, no wall-clock fields."""
    doc = {
        "command": command,
        "seed": seed,
        "config": config,
        "artifacts": sorted(str(a) for a in artifacts),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
