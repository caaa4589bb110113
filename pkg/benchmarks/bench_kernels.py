"""Compare the compiled random-stream kernels against the pure fallback.

The linear algebra runs through numpy/BLAS under either backend, so the
compiled extension's win is the sequential xoshiro256** stream generation
(per-sample Gumbel draws, shuffle keys, batch orders) that Python cannot
vectorise. Reports raw fill throughput and an end-to-end training epoch.

Run: python3 benchmarks/bench_kernels.py
(The backend is chosen at import, so both sides run in subprocesses.)
"""

import json
import os
import subprocess
import sys
import time

WORKER = """
import json, os, time
import numpy as np
from haicollab.numerics import Rng, backend_name, derive_seed
from haicollab.taskgen import make_gaussian_task, build_multirater, SymmetricAnnotator
from haicollab.basemodel import train_base, predict_proba_batch
from haicollab.consensus import build_consensus_dataset
from haicollab.collab import TrainConfig, train

def timeit(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best

out = {"backend": backend_name()}

rng = Rng(1)
n = 2_000_000
out["uniform_fill_2m_s"] = timeit(lambda: rng.uniform(n))
out["gumbel_fill_2m_s"] = timeit(lambda: rng.gumbel(n))

rng2 = Rng(2)
tr, te = make_gaussian_task(3, 8, 3000, 500, 3.0, rng2)
mr = build_multirater(tr, [SymmetricAnnotator(0.25)] * 3, rng2)
base = train_base(mr, epochs=10, rng=Rng(3))
cons = build_consensus_dataset(mr, predict_proba_batch(base, mr.features))
cfg = TrainConfig(lambda_cost=0.1, epochs=20, batch_size=256, seed=4)
out["train_20_epochs_s"] = timeit(lambda: train(cons, base, cfg), repeat=1)
print(json.dumps(out))
"""


def run(pure: bool) -> dict:
    env = dict(os.environ)
    if pure:
        env["HAICOLLAB_PURE_PYTHON"] = "1"
    else:
        env.pop("HAICOLLAB_PURE_PYTHON", None)
    proc = subprocess.run(
        [sys.executable, "-c", WORKER], env=env, capture_output=True, text=True, check=True
    )
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main() -> None:
    t0 = time.perf_counter()
    compiled = run(pure=False)
    pure = run(pure=True)
    if compiled["backend"] == pure["backend"]:
        print("note: compiled backend unavailable, comparing pure vs pure")
    rows = [
        ("uniform fill, 2M doubles", "uniform_fill_2m_s"),
        ("gumbel fill, 2M doubles", "gumbel_fill_2m_s"),
        ("router training, 20 epochs", "train_20_epochs_s"),
    ]
    print(f"{'kernel':<30} {'compiled':>10} {'pure':>10} {'speedup':>9}")
    for label, key in rows:
        c, p = compiled[key], pure[key]
        print(f"{label:<30} {c:>9.3f}s {p:>9.3f}s {p / c:>8.1f}x")
    print(f"\ntotal benchmark time {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
