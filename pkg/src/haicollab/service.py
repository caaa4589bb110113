"""Live deferral sessions over HTTP: a human fills the expert slots.

Endpoints (JSON bodies, errors as {"code", "message"}):

    GET  /bundles                      -> {"bundles": [...]}
    POST /sessions {bundle, overrides} -> {"id", ...}
    GET  /sessions/{id}/next
    POST /sessions/{id}/labels {sample_id, labels: [int]}
    GET  /sessions/{id}/stats

Each session walks a seeded shuffle of the test set. The trained selection
policy decides per sample; AI-alone samples resolve inline, otherwise the
session opens a pending request for the human's share of the k required
labels (the recorded pool fills the rest). The true label of a pending
sample is never revealed before submit. Every event lands in a JSON Lines
session log that can be replayed to re-derive the running stats.
"""

from __future__ import annotations

import json
import secrets
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .basemodel import predict_proba_batch
from .collab import CollabModel, CollaborationMode, load_bundle, resolve_with_labels, selection_distribution
from .consensus import majority_vote_rows
from .numerics import Rng, derive_seed
from .taskgen import MultiRaterDataset, load_dataset


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _not_found(message: str) -> ServiceError:
    return ServiceError(404, "not_found", message)


def _conflict(message: str) -> ServiceError:
    return ServiceError(409, "conflict", message)


def _invalid(message: str) -> ServiceError:
    return ServiceError(422, "validation_error", message)


@dataclass
class PendingRequest:
    sample_row: int
    sample_id: int
    mode: CollaborationMode
    human_needed: int
    recorded_labels: list[int]


@dataclass
class SessionStats:
    n: int = 0
    correct: int = 0
    cost: int = 0
    mode_histogram: dict[str, int] = field(default_factory=dict)

    def record(self, mode: CollaborationMode, is_correct: bool) -> None:
        self.n += 1
        self.correct += int(is_correct)
        self.cost += mode.cost
        self.mode_histogram[mode.label] = self.mode_histogram.get(mode.label, 0) + 1

    def payload(self, remaining: int) -> dict:
        return {
            "n": self.n,
            "correct": self.correct,
            "accuracy": self.correct / self.n if self.n else 0.0,
            "cost": self.cost,
            "cost_per_sample": self.cost / self.n if self.n else 0.0,
            "mode_histogram": dict(self.mode_histogram),
            "remaining": remaining,
        }


@dataclass
class Session:
    session_id: str
    bundle_id: str
    model: CollabModel
    queue: np.ndarray  # row indices into the test set
    human_slots: int
    rng: Rng
    log_path: Path
    pos: int = 0
    stats: SessionStats = field(default_factory=SessionStats)
    pending: PendingRequest | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    def remaining(self) -> int:
        return len(self.queue) - self.pos

    def log(self, event: dict) -> None:
        with open(self.log_path, "a") as fh:
            fh.write(json.dumps(event) + "\n")


class CreateSessionBody(BaseModel):
    bundle: str
    overrides: dict = {}


class SubmitLabelsBody(BaseModel):
    sample_id: int
    labels: list[int]


_ALLOWED_OVERRIDES = {"seed", "human_slots", "max_samples", "shuffle"}


def _projection_basis(features: np.ndarray) -> np.ndarray:
    """Top-2 principal directions, sign-fixed for reproducibility."""
    centered = features - features.mean(axis=0)
    cov = centered.T @ centered / max(1, centered.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    basis = vecs[:, np.argsort(vals)[::-1][:2]]
    for j in range(basis.shape[1]):
        if basis[np.argmax(np.abs(basis[:, j])), j] < 0:
            basis[:, j] *= -1
    return basis


def create_app(
    run_dir: str | Path,
    human_slots: int = 1,
    session_log_dir: str | Path | None = None,
    frontend_dir: str | Path | None = None,
) -> FastAPI:
    """Service over a pipeline output directory (datasets + bundles/)."""
    run_dir = Path(run_dir)
    test_set: MultiRaterDataset = load_dataset(run_dir / "dataset_test.jsonl")
    train_path = run_dir / "dataset_train.jsonl"
    log_dir = Path(session_log_dir) if session_log_dir else run_dir / "session_logs"
    log_dir.mkdir(parents=True, exist_ok=True)

    if train_path.exists():
        train_set = load_dataset(train_path)
        basis = _projection_basis(train_set.features)
        bg_rows = np.linspace(0, len(train_set) - 1, min(300, len(train_set))).astype(int)
        bg_xy = train_set.features[bg_rows] @ basis
        bg_labels = majority_vote_rows(train_set.annotations[bg_rows], train_set.num_classes)
        background = [
            {"x": float(x), "y": float(y), "label": int(lbl)}
            for (x, y), lbl in zip(bg_xy, bg_labels)
        ]
    else:
        basis = _projection_basis(test_set.features)
        background = []

    bundles_dir = run_dir / "bundles"
    bundle_ids = sorted(
        p.name for p in bundles_dir.iterdir() if (p / "config.json").exists()
    ) if bundles_dir.exists() else []

    app = FastAPI(title="haicollab session service")
    sessions: dict[str, Session] = {}
    models: dict[str, tuple[CollabModel, dict]] = {}

    @app.exception_handler(ServiceError)
    async def _service_error(_req: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": exc.message})

    def _bundle(bundle_id: str) -> tuple[CollabModel, dict]:
        if bundle_id not in models:
            if bundle_id not in bundle_ids:
                raise _not_found(f"unknown bundle {bundle_id!r}")
            models[bundle_id] = load_bundle(bundles_dir / bundle_id)
        return models[bundle_id]

    def _session(session_id: str) -> Session:
        if session_id not in sessions:
            raise _not_found(f"unknown session {session_id!r}")
        return sessions[session_id]

    @app.get("/bundles")
    def list_bundles():
        out = []
        for bid in bundle_ids:
            _, cfg = _bundle(bid)
            out.append(
                {
                    "id": bid,
                    "lambda": cfg.get("lambda"),
                    "M": cfg.get("M"),
                    "num_classes": cfg.get("num_classes"),
                }
            )
        return {"bundles": out}

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        unknown = set(body.overrides) - _ALLOWED_OVERRIDES
        if unknown:
            raise _invalid(f"unknown override {sorted(unknown)[0]!r}")
        model, _cfg = _bundle(body.bundle)
        seed = int(body.overrides.get("seed", 0))
        slots = int(body.overrides.get("human_slots", human_slots))
        if slots < 0:
            raise _invalid("human_slots must be >= 0")
        max_samples = body.overrides.get("max_samples")
        if body.overrides.get("shuffle", True):
            order = Rng(derive_seed(seed, 0xFACE)).permutation(len(test_set))
        else:
            order = np.arange(len(test_set))
        if max_samples is not None:
            if not isinstance(max_samples, int) or max_samples < 1:
                raise _invalid("max_samples must be a positive integer")
            order = order[:max_samples]
        session_id = secrets.token_hex(8)
        session = Session(
            session_id=session_id,
            bundle_id=body.bundle,
            model=model,
            queue=order,
            human_slots=slots,
            rng=Rng(derive_seed(seed, 0xD1CE)),
            log_path=log_dir / f"session_{session_id}.jsonl",
        )
        sessions[session_id] = session
        session.log(
            {
                "event": "created",
                "bundle": body.bundle,
                "seed": seed,
                "human_slots": slots,
                "n_samples": len(order),
            }
        )
        return {
            "id": session_id,
            "bundle": body.bundle,
            "num_classes": test_set.num_classes,
            "M": model.num_users,
            "human_slots": slots,
            "n_samples": len(order),
            "background": background,
        }

    @app.get("/sessions/{session_id}/next")
    def next_sample(session_id: str):
        s = _session(session_id)
        with s.lock:
            if s.pending is not None:
                raise _conflict(f"sample {s.pending.sample_id} is awaiting labels")
            if s.pos >= len(s.queue):
                return {"done": True, "stats": s.stats.payload(0)}
            row = int(s.queue[s.pos])
            x = test_set.features[row]
            sel_probs = selection_distribution(s.model, x[None, :])[0]
            mode = CollaborationMode.from_index(int(np.argmax(sel_probs)), s.model.num_users)
            ai_argmax = int(np.argmax(predict_proba_batch(s.model.base, x[None, :])[0]))
            xy = x @ basis
            payload = {
                "done": False,
                "sample_id": int(test_set.ids[row]),
                "features": x.tolist(),
                "render": {"x": float(xy[0]), "y": float(xy[1])},
                "mode": mode.label,
                "selection_probs": [float(v) for v in sel_probs],
                "ai_hint": ai_argmax if mode.uses_ai else None,
            }
            human_needed = min(s.human_slots, mode.k)
            if human_needed == 0:
                # nothing owed by the human: resolve inline (AI alone, or all
                # k labels drawn from the recorded pool)
                if mode.kind == "ai":
                    recorded: list[int] = []
                    prediction = ai_argmax
                else:
                    order = s.rng.permutation(test_set.num_annotators)
                    recorded = [int(test_set.annotations[row, j]) for j in order[: mode.k]]
                    prediction = resolve_with_labels(s.model, x, mode, np.asarray(recorded))
                truth = int(test_set.true_labels[row]) if test_set.true_labels is not None else None
                correct = bool(prediction == truth) if truth is not None else False
                s.stats.record(mode, correct)
                s.pos += 1
                s.log(
                    {
                        "event": "resolved",
                        "sample_id": payload["sample_id"],
                        "mode": mode.label,
                        "prediction": prediction,
                        "true_label": truth,
                        "correct": correct,
                        "cost_delta": mode.cost,
                        "human_labels": [],
                        "recorded_labels": recorded,
                    }
                )
                payload["labels_needed"] = 0
                payload["resolved"] = {
                    "prediction": prediction,
                    "correct": correct,
                    "true_label": truth,
                }
            else:
                recorded_needed = mode.k - human_needed
                order = s.rng.permutation(test_set.num_annotators)
                recorded = [
                    int(test_set.annotations[row, j])
                    for j in order[human_needed : human_needed + recorded_needed]
                ]
                s.pending = PendingRequest(
                    sample_row=row,
                    sample_id=payload["sample_id"],
                    mode=mode,
                    human_needed=human_needed,
                    recorded_labels=recorded,
                )
                s.log(
                    {
                        "event": "decision",
                        "sample_id": payload["sample_id"],
                        "mode": mode.label,
                        "labels_needed": human_needed,
                    }
                )
                payload["labels_needed"] = human_needed
            payload["stats"] = s.stats.payload(s.remaining())
            return payload

    @app.post("/sessions/{session_id}/labels")
    def submit_labels(session_id: str, body: SubmitLabelsBody):
        s = _session(session_id)
        with s.lock:
            if s.pending is None:
                raise _conflict("no pending label request")
            if body.sample_id != s.pending.sample_id:
                raise _conflict(
                    f"pending sample is {s.pending.sample_id}, got {body.sample_id}"
                )
            if len(body.labels) != s.pending.human_needed:
                raise _invalid(
                    f"expected {s.pending.human_needed} labels, got {len(body.labels)}"
                )
            for v in body.labels:
                if not 0 <= v < test_set.num_classes:
                    raise _invalid(f"label {v} out of range [0, {test_set.num_classes})")
            pending = s.pending
            row = pending.sample_row
            all_labels = list(body.labels) + pending.recorded_labels
            prediction = resolve_with_labels(
                s.model, test_set.features[row], pending.mode, np.asarray(all_labels)
            )
            truth = int(test_set.true_labels[row]) if test_set.true_labels is not None else None
            correct = bool(prediction == truth) if truth is not None else False
            s.stats.record(pending.mode, correct)
            s.pending = None
            s.pos += 1
            s.log(
                {
                    "event": "resolved",
                    "sample_id": pending.sample_id,
                    "mode": pending.mode.label,
                    "prediction": prediction,
                    "true_label": truth,
                    "correct": correct,
                    "cost_delta": pending.mode.cost,
                    "human_labels": list(body.labels),
                    "recorded_labels": pending.recorded_labels,
                }
            )
            return {
                "prediction": prediction,
                "correct": correct,
                "true_label": truth,
                "stats": s.stats.payload(s.remaining()),
            }

    @app.get("/sessions/{session_id}/stats")
    def stats(session_id: str):
        s = _session(session_id)
        with s.lock:
            return s.stats.payload(s.remaining())

    if frontend_dir and Path(frontend_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="console")

    return app


def replay_session_log(path: str | Path) -> dict:
    """Re-derive {n, correct, cost} from a session event log."""
    n = correct = cost = 0
    for raw in Path(path).read_text().splitlines():
        event = json.loads(raw)
        if event.get("event") == "resolved":
            n += 1
            correct += int(bool(event["correct"]))
            cost += int(event["cost_delta"])
            expected = len(event["human_labels"]) + len(event["recorded_labels"])
            if event["mode"] != "ai_alone" and event["cost_delta"] != expected:
                raise ValueError(
                    f"log inconsistency: cost_delta {event['cost_delta']} != labels {expected}"
                )
    return {"n": n, "correct": correct, "cost": cost}
