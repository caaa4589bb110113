"""Experiment configuration: JSON file -> validated dataclasses.

Unknown keys anywhere are errors, so a typo in a hyperparameter name fails
fast instead of silently running defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .collab import TrainConfig
from .errors import ConfigError
from .evalharness import ABLATION_VARIANTS, DEFAULT_LAMBDA_GRID
from .numerics import Rng
from .taskgen import (
    AnnotatorModel,
    ConfusionMatrixAnnotator,
    SymmetricAnnotator,
    make_instance_dependent,
)


@dataclass
class TaskSpec:
    num_classes: int = 3
    dim: int = 8
    n_train: int = 5000
    n_test: int = 2000
    class_separation: float = 3.0


@dataclass
class AnnotatorSpec:
    kind: str  # "symmetric" | "confusion_matrix" | "instance_dependent"
    noise_rate: float | None = None
    matrix: list | None = None
    base_rate: float | None = None


@dataclass
class BaseSpec:
    recipe: str = "lnl_proxy"
    epochs: int = 40
    hidden: int = 64
    learning_rate: float = 0.05
    batch_size: int = 256
    label_smoothing: float = 0.1
    holdout_fraction: float = 0.1


@dataclass
class ServeSpec:
    host: str = "127.0.0.1"
    port: int = 8000
    human_slots: int = 1


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/out"
    task: TaskSpec = field(default_factory=TaskSpec)
    annotators: list[AnnotatorSpec] = field(default_factory=list)
    num_users: int = 3  # file key "M"
    base: BaseSpec = field(default_factory=BaseSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    lambda_grid: list[float] = field(default_factory=lambda: list(DEFAULT_LAMBDA_GRID))
    ablations: list[str] = field(default_factory=lambda: list(ABLATION_VARIANTS))
    sp_budget_fractions: list[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    scale_users: list[int] = field(default_factory=lambda: [3, 10, 20])
    jobs: int = 1
    serve: ServeSpec = field(default_factory=ServeSpec)


_TASK_KEYS = {"num_classes", "dim", "n_train", "n_test", "class_separation"}
_ANNOTATOR_KEYS = {"kind", "noise_rate", "matrix", "base_rate"}
_BASE_KEYS = {
    "recipe",
    "epochs",
    "hidden",
    "learning_rate",
    "batch_size",
    "label_smoothing",
    "holdout_fraction",
}
_TRAIN_KEYS = {
    "lambda",
    "epochs",
    "learning_rate",
    "momentum",
    "weight_decay",
    "batch_size",
    "selection_temperature",
    "ai_norm_temperature",
    "hidden",
    "lr_schedule",
    "ai_norm_stochastic",
}
_SERVE_KEYS = {"host", "port", "human_slots"}
_TOP_KEYS = {
    "seed",
    "out_dir",
    "task",
    "annotators",
    "M",
    "base",
    "train",
    "lambda_grid",
    "ablations",
    "sp_budget_fractions",
    "scale_users",
    "jobs",
    "serve",
}


def _check_keys(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"{where}.{name}: unknown key" if where else f"{name}: unknown key")


def _expect(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def parse_config(doc: dict) -> ExperimentConfig:
    _expect(isinstance(doc, dict), "config root must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "")
    cfg = ExperimentConfig()

    if "seed" in doc:
        _expect(isinstance(doc["seed"], int), "seed: must be an integer")
        cfg.seed = doc["seed"]
    if "out_dir" in doc:
        _expect(isinstance(doc["out_dir"], str), "out_dir: must be a string")
        cfg.out_dir = doc["out_dir"]
    if "jobs" in doc:
        _expect(isinstance(doc["jobs"], int) and doc["jobs"] >= 1, "jobs: must be an integer >= 1")
        cfg.jobs = doc["jobs"]

    if "task" in doc:
        t = doc["task"]
        _check_keys(t, _TASK_KEYS, "task")
        cfg.task = TaskSpec(**{**cfg.task.__dict__, **t})
        _expect(cfg.task.num_classes >= 2, "task.num_classes: must be >= 2")
        _expect(cfg.task.dim >= cfg.task.num_classes - 1, "task.dim: must be >= num_classes - 1")
        _expect(cfg.task.class_separation >= 0, "task.class_separation: must be >= 0")
        _expect(cfg.task.n_train > 0 and cfg.task.n_test > 0, "task.n_train/n_test: must be > 0")

    if "annotators" in doc:
        _expect(isinstance(doc["annotators"], list) and doc["annotators"], "annotators: must be a nonempty list")
        specs = []
        for i, a in enumerate(doc["annotators"]):
            _check_keys(a, _ANNOTATOR_KEYS, f"annotators[{i}]")
            _expect("kind" in a, f"annotators[{i}].kind: required")
            kind = a["kind"]
            if kind == "symmetric":
                _expect("noise_rate" in a, f"annotators[{i}].noise_rate: required for symmetric")
                _expect(0 <= a["noise_rate"] < 1, f"annotators[{i}].noise_rate: must be in [0, 1)")
            elif kind == "confusion_matrix":
                _expect("matrix" in a, f"annotators[{i}].matrix: required for confusion_matrix")
            elif kind == "instance_dependent":
                _expect("base_rate" in a, f"annotators[{i}].base_rate: required for instance_dependent")
                _expect(0 <= a["base_rate"] < 1, f"annotators[{i}].base_rate: must be in [0, 1)")
            else:
                raise ConfigError(f"annotators[{i}].kind: unknown kind {kind!r}")
            specs.append(AnnotatorSpec(**a))
        cfg.annotators = specs

    if "M" in doc:
        _expect(isinstance(doc["M"], int) and doc["M"] >= 1, "M: must be an integer >= 1")
        cfg.num_users = doc["M"]
    if cfg.annotators and len(cfg.annotators) != cfg.num_users:
        raise ConfigError(f"M: {cfg.num_users} does not match {len(cfg.annotators)} annotators")
    if not cfg.annotators:
        cfg.annotators = [AnnotatorSpec("symmetric", noise_rate=0.25) for _ in range(cfg.num_users)]

    if "base" in doc:
        b = doc["base"]
        _check_keys(b, _BASE_KEYS, "base")
        cfg.base = BaseSpec(**{**cfg.base.__dict__, **b})
        _expect(cfg.base.recipe in ("lnl_proxy", "plain_noisy"), "base.recipe: must be lnl_proxy or plain_noisy")

    if "train" in doc:
        t = dict(doc["train"])
        _check_keys(t, _TRAIN_KEYS, "train")
        if "lambda" in t:
            t["lambda_cost"] = t.pop("lambda")
        try:
            cfg.train = TrainConfig(**{**cfg.train.__dict__, **t})
        except Exception as exc:
            raise ConfigError(f"train: {exc}") from exc

    if "lambda_grid" in doc:
        grid = doc["lambda_grid"]
        _expect(isinstance(grid, list) and grid, "lambda_grid: must be a nonempty list")
        _expect(all(isinstance(v, (int, float)) and v >= 0 for v in grid), "lambda_grid: values must be >= 0")
        cfg.lambda_grid = [float(v) for v in grid]

    if "ablations" in doc:
        _expect(isinstance(doc["ablations"], list), "ablations: must be a list")
        for v in doc["ablations"]:
            _expect(v in ABLATION_VARIANTS, f"ablations: unknown variant {v!r}")
        cfg.ablations = list(doc["ablations"])

    if "sp_budget_fractions" in doc:
        fr = doc["sp_budget_fractions"]
        _expect(isinstance(fr, list) and all(0 <= v <= 1 for v in fr), "sp_budget_fractions: values must be in [0, 1]")
        cfg.sp_budget_fractions = [float(v) for v in fr]

    if "scale_users" in doc:
        ms = doc["scale_users"]
        _expect(isinstance(ms, list) and all(isinstance(v, int) and v >= 1 for v in ms), "scale_users: must be a list of integers >= 1")
        cfg.scale_users = ms

    if "serve" in doc:
        s = doc["serve"]
        _check_keys(s, _SERVE_KEYS, "serve")
        cfg.serve = ServeSpec(**{**cfg.serve.__dict__, **s})

    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc)


def resolved_dict(cfg: ExperimentConfig) -> dict:
    """Full resolved config as a plain JSON-able dict (manifest embedding)."""

    def plain(obj):
        if hasattr(obj, "__dict__"):
            return {k: plain(v) for k, v in obj.__dict__.items()}
        if isinstance(obj, (list, tuple)):
            return [plain(v) for v in obj]
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        return obj

    return plain(cfg)


def build_annotators(cfg: ExperimentConfig, rng: Rng) -> list[AnnotatorModel]:
    """Instantiate annotator models; instance-dependent ones draw their own
    projection vectors (independent per annotator) from the given stream."""
    models: list[AnnotatorModel] = []
    for spec in cfg.annotators:
        if spec.kind == "symmetric":
            models.append(SymmetricAnnotator(spec.noise_rate))
        elif spec.kind == "confusion_matrix":
            models.append(ConfusionMatrixAnnotator(np.asarray(spec.matrix, dtype=np.float64)))
        else:
            models.append(make_instance_dependent(cfg.task.dim, spec.base_rate, rng))
    return models
