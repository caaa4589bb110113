"""Record a real service session as a console test fixture.

Builds a small pipeline in a temp dir, drives the session protocol in the
exact call pattern the console's SessionClient uses (create, stats sync,
then next/submit), snapshots GET /stats after every step, and writes the
ordered trace to frontend/tests/fixtures/session_trace.json. The vitest
smoke test replays the trace against the client and checks its gauges equal
every snapshot.

Run: python3 tools/record_console_fixture.py
"""

import json
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from haicollab.basemodel import predict_proba_batch, train_base
from haicollab.collab import TrainConfig, save_bundle, train
from haicollab.consensus import build_consensus_dataset
from haicollab.numerics import Rng
from haicollab.service import create_app
from haicollab.taskgen import SymmetricAnnotator, build_multirater, make_gaussian_task, save_dataset

BUNDLE = "lambda_0.01"
SESSION_SEED = 424242
TARGET_SUBMITS = 10


def build_run_dir(root: Path) -> None:
    rng = Rng(9000)
    train_ds, test_ds = make_gaussian_task(3, 6, 900, 200, 3.0, rng)
    annotators = [SymmetricAnnotator(0.25)] * 3
    train_mr = build_multirater(train_ds, annotators, rng)
    test_mr = build_multirater(test_ds, annotators, rng)
    save_dataset(root / "dataset_train.jsonl", train_mr)
    save_dataset(root / "dataset_test.jsonl", test_mr)
    base = train_base(train_mr, epochs=12, rng=Rng(9001))
    cons = build_consensus_dataset(train_mr, predict_proba_batch(base, train_mr.features))
    model = train(cons, base, TrainConfig(lambda_cost=0.01, epochs=12, batch_size=256, seed=9002))
    save_bundle(root / "bundles" / BUNDLE, model, {"lambda": 0.01, "seed": 9002})


def main() -> None:
    entries = []

    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        build_run_dir(root)
        client = TestClient(create_app(root))

        def exchange(method: str, path: str, body=None):
            if method == "GET":
                resp = client.get(path)
            else:
                resp = client.post(path, json=body)
            entries.append(
                {
                    "kind": "exchange",
                    "method": method,
                    "path": path,
                    "request": body,
                    "status": resp.status_code,
                    "response": resp.json(),
                }
            )
            return resp.json()

        def stats_check(session_id: str):
            entries.append(
                {
                    "kind": "stats_check",
                    "response": client.get(f"/sessions/{session_id}/stats").json(),
                }
            )

        created = exchange(
            "POST", "/sessions", {"bundle": BUNDLE, "overrides": {"seed": SESSION_SEED}}
        )
        sid = created["id"]
        num_classes = created["num_classes"]
        exchange("GET", f"/sessions/{sid}/stats")  # the client's post-create sync
        stats_check(sid)

        submits = 0
        while submits < TARGET_SUBMITS:
            nxt = exchange("GET", f"/sessions/{sid}/next")
            stats_check(sid)
            if nxt.get("done"):
                raise SystemExit("queue exhausted before reaching the target submits")
            if nxt["labels_needed"] > 0:
                label = nxt["sample_id"] % num_classes
                exchange(
                    "POST",
                    f"/sessions/{sid}/labels",
                    {"sample_id": nxt["sample_id"], "labels": [label] * nxt["labels_needed"]},
                )
                stats_check(sid)
                submits += 1

    out = Path(__file__).resolve().parents[1] / "frontend" / "tests" / "fixtures"
    out.mkdir(parents=True, exist_ok=True)
    # session ids are random per run: rewrite to a fixed placeholder so the
    # replay is stable
    text = json.dumps(entries, indent=1).replace(sid, "SESSION")
    (out / "session_trace.json").write_text(text)
    print(f"wrote {out / 'session_trace.json'} ({len(entries)} entries, {submits} submits)")


if __name__ == "__main__":
    main()
