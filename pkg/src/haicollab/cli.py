"""Config-driven experiment runner.

Subcommands map to pipeline stages; every stage writes its artifacts plus a
manifest embedding the resolved config and seed, and is idempotent for a
fixed (config, seed). Exit codes: 0 success, 2 config error, 3 missing
upstream artifact, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .basemodel import load_base, predict_proba_batch, save_base, train_base
from .collab import load_bundle, save_bundle, train, write_traces
from .config import ExperimentConfig, build_annotators, load_config, resolved_dict
from .consensus import (
    build_consensus_dataset,
    consensus_accuracy,
    labeled_consensus_dataset,
    load_consensus,
    majority_vote_rows,
    random_label_rows,
    save_consensus,
)
from .errors import ConfigError, HaiCollabError, MissingArtifactError, ParseError
from .evalharness import (
    AblationSpec,
    evaluate,
    run_ablation,
    scale_user_pool,
    sp_baseline,
    sweep_lambda,
    train_and_evaluate,
    write_curve_csv,
    write_manifest,
    write_scale_csv,
    write_sp_csv,
)
from .numerics import Rng, derive_seed
from .taskgen import build_multirater, load_dataset, make_gaussian_task, save_dataset

log = logging.getLogger(__name__)

TRAIN_DATA = "dataset_train.jsonl"
TEST_DATA = "dataset_test.jsonl"
BASE_MODEL = "base_model.json"
CONSENSUS = "consensus.jsonl"

_SEED_GEN = 101
_SEED_BASE = 102
_SEED_SWEEP = 103
_SEED_EVAL = 104
_SEED_ABLATE = 105
_SEED_SCALE = 106
_SEED_SP = 107


def _require(path: Path, producer: str):
    if not path.exists():
        raise MissingArtifactError(
            f"missing {path.name}: run `{producer}` first", required_command=producer
        )
    return path


def _lambda_dirname(lam: float) -> str:
    return f"lambda_{lam:g}"


def cmd_gen(cfg: ExperimentConfig, out: Path) -> list[str]:
    rng = Rng(derive_seed(cfg.seed, _SEED_GEN))
    train_ds, test_ds = make_gaussian_task(
        cfg.task.num_classes,
        cfg.task.dim,
        cfg.task.n_train,
        cfg.task.n_test,
        cfg.task.class_separation,
        rng,
    )
    annotators = build_annotators(cfg, rng)
    train_mr = build_multirater(train_ds, annotators, rng)
    test_mr = build_multirater(test_ds, annotators, rng)
    save_dataset(out / TRAIN_DATA, train_mr)
    save_dataset(out / TEST_DATA, test_mr)
    return [TRAIN_DATA, TEST_DATA]


def cmd_train_base(cfg: ExperimentConfig, out: Path) -> list[str]:
    train_mr = load_dataset(_require(out / TRAIN_DATA, "gen"))
    rng = Rng(derive_seed(cfg.seed, _SEED_BASE))
    model = train_base(
        train_mr,
        recipe=cfg.base.recipe,
        epochs=cfg.base.epochs,
        rng=rng,
        hidden=cfg.base.hidden,
        learning_rate=cfg.base.learning_rate,
        batch_size=cfg.base.batch_size,
        label_smoothing=cfg.base.label_smoothing,
        holdout_fraction=cfg.base.holdout_fraction,
    )
    save_base(out / BASE_MODEL, model)
    return [BASE_MODEL]


def cmd_consensus(cfg: ExperimentConfig, out: Path) -> list[str]:
    train_mr = load_dataset(_require(out / TRAIN_DATA, "gen"))
    base = load_base(_require(out / BASE_MODEL, "train-base"))
    ai_probs = predict_proba_batch(base, train_mr.features)
    cons = build_consensus_dataset(train_mr, ai_probs)
    save_consensus(out / CONSENSUS, cons)
    artifacts = [CONSENSUS]
    if train_mr.true_labels is not None:
        # Table-2-style comparison of labelling schemes on this training set
        mv = labeled_consensus_dataset(
            train_mr, majority_vote_rows(train_mr.annotations, train_mr.num_classes)
        )
        rnd = labeled_consensus_dataset(
            train_mr, random_label_rows(train_mr.annotations, Rng(derive_seed(cfg.seed, _SEED_GEN, 9)))
        )
        rows = [
            ("majority_vote", consensus_accuracy(mv)),
            ("random_label", consensus_accuracy(rnd)),
            ("weighted_pool", consensus_accuracy(cons)),
        ]
        with open(out / "consensus_report.csv", "w") as fh:
            fh.write("method,dataset,consensus_accuracy\n")
            for method, acc in rows:
                fh.write(f"{method},train,{acc!r}\n")
        artifacts.append("consensus_report.csv")
    return artifacts


def _load_training_state(cfg: ExperimentConfig, out: Path):
    train_mr = load_dataset(_require(out / TRAIN_DATA, "gen"))
    test_mr = load_dataset(_require(out / TEST_DATA, "gen"))
    base = load_base(_require(out / BASE_MODEL, "train-base"))
    cons = load_consensus(_require(out / CONSENSUS, "consensus"), train_mr)
    return train_mr, test_mr, base, cons


def cmd_train(cfg: ExperimentConfig, out: Path) -> list[str]:
    _, test_mr, base, cons = _load_training_state(cfg, out)
    lam = cfg.train.lambda_cost
    point, model = train_and_evaluate(cons, base, test_mr, cfg.train, lam, cfg.seed)
    bundle_dir = out / "bundles" / _lambda_dirname(lam)
    save_bundle(bundle_dir, model, {"lambda": lam, "seed": cfg.seed})
    write_curve_csv(out / "train_point.csv", [point], model.num_users)
    return [str(bundle_dir.relative_to(out)), "train_point.csv"]


def cmd_eval(cfg: ExperimentConfig, out: Path) -> list[str]:
    test_mr = load_dataset(_require(out / TEST_DATA, "gen"))
    bundle_dir = out / "bundles" / _lambda_dirname(cfg.train.lambda_cost)
    if not bundle_dir.exists():
        raise MissingArtifactError(
            f"missing bundle {bundle_dir.name}: run `train` first", required_command="train"
        )
    model, bundle_cfg = load_bundle(bundle_dir)
    rng = Rng(derive_seed(cfg.seed, _SEED_EVAL))
    point, traces = evaluate(
        model, test_mr, rng, lambda_cost=float(bundle_cfg.get("lambda", 0.0)), collect_traces=True
    )
    write_curve_csv(out / "eval_point.csv", [point], model.num_users)
    write_traces(out / "traces.jsonl", traces)
    return ["eval_point.csv", "traces.jsonl"]


def cmd_sweep(cfg: ExperimentConfig, out: Path, jobs: int) -> list[str]:
    _, test_mr, base, cons = _load_training_state(cfg, out)
    points = sweep_lambda(
        cfg.lambda_grid, cons, base, test_mr, cfg.train, cfg.seed, jobs=jobs
    )
    write_curve_csv(out / "curve.csv", points, test_mr.num_annotators)
    budgets = [int(round(f * len(test_mr))) for f in cfg.sp_budget_fractions]
    sp_rows = sp_baseline(base, test_mr, budgets, Rng(derive_seed(cfg.seed, _SEED_SP)))
    write_sp_csv(out / "sp_baseline.csv", sp_rows, len(test_mr))
    return ["curve.csv", "sp_baseline.csv"]


def cmd_ablate(cfg: ExperimentConfig, out: Path, jobs: int) -> list[str]:
    train_mr = load_dataset(_require(out / TRAIN_DATA, "gen"))
    test_mr = load_dataset(_require(out / TEST_DATA, "gen"))
    artifacts = []
    for variant in cfg.ablations:
        points = run_ablation(
            AblationSpec(variant),
            train_mr,
            test_mr,
            cfg.lambda_grid,
            cfg.train,
            derive_seed(cfg.seed, _SEED_ABLATE),
            base_epochs=cfg.base.epochs,
            base_hidden=cfg.base.hidden,
            jobs=jobs,
        )
        m = 1 if variant.startswith("single_user") else test_mr.num_annotators
        name = f"ablation_{variant}.csv"
        write_curve_csv(out / name, points, m)
        artifacts.append(name)
    return artifacts


def cmd_scale_users(cfg: ExperimentConfig, out: Path) -> list[str]:
    train_mr = load_dataset(_require(out / TRAIN_DATA, "gen"))
    test_mr = load_dataset(_require(out / TEST_DATA, "gen"))
    results = scale_user_pool(
        cfg.scale_users,
        train_mr,
        test_mr,
        cfg.lambda_grid,
        cfg.train,
        derive_seed(cfg.seed, _SEED_SCALE),
        base_epochs=cfg.base.epochs,
        base_hidden=cfg.base.hidden,
    )
    write_scale_csv(out / "scale_users.csv", results)
    return ["scale_users.csv"]


def cmd_serve(cfg: ExperimentConfig, out: Path, port: int | None) -> list[str]:
    import uvicorn

    from .service import create_app

    _require(out / TEST_DATA, "gen")
    if not (out / "bundles").exists():
        raise MissingArtifactError("no bundles: run `train` or `sweep` first", required_command="train")
    # serve the console when a built frontend sits next to the package
    frontend = Path(__file__).resolve().parents[2] / "frontend"
    frontend_dir = frontend if (frontend / "dist").exists() else None
    app = create_app(out, human_slots=cfg.serve.human_slots, frontend_dir=frontend_dir)
    uvicorn.run(app, host=cfg.serve.host, port=port or cfg.serve.port, log_level="info")
    return []


COMMANDS = (
    "gen",
    "consensus",
    "train-base",
    "train",
    "eval",
    "sweep",
    "ablate",
    "scale-users",
    "serve",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="haicollab", description="human-AI collaborative classification lab"
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="experiment config (JSON)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="override the config output directory")
    parser.add_argument("--jobs", type=int, default=None, help="parallel workers for sweep/ablate")
    parser.add_argument("--port", type=int, default=None, help="serve: override port")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = args.out
        if args.jobs is not None:
            cfg.jobs = args.jobs
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "gen":
            artifacts = cmd_gen(cfg, out)
        elif args.command == "train-base":
            artifacts = cmd_train_base(cfg, out)
        elif args.command == "consensus":
            artifacts = cmd_consensus(cfg, out)
        elif args.command == "train":
            artifacts = cmd_train(cfg, out)
        elif args.command == "eval":
            artifacts = cmd_eval(cfg, out)
        elif args.command == "sweep":
            artifacts = cmd_sweep(cfg, out, cfg.jobs)
        elif args.command == "ablate":
            artifacts = cmd_ablate(cfg, out, cfg.jobs)
        elif args.command == "scale-users":
            artifacts = cmd_scale_users(cfg, out)
        else:
            artifacts = cmd_serve(cfg, out, args.port)
    except MissingArtifactError as exc:
        print(f"missing dependency: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except HaiCollabError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 4

    manifest_name = f"manifest_{args.command.replace('-', '_')}.json"
    write_manifest(out / manifest_name, args.command, resolved_dict(cfg), cfg.seed, artifacts)
    for a in artifacts:
        log.info("wrote %s", out / a)
    return 0


if __name__ == "__main__":
    sys.exit(main())
