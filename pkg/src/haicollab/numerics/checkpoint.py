"""JSON checkpoints for MLP parameters.

Format: {"layers": [{"rows", "cols", "weight": [...], "bias": [...]}, ...],
"meta": {...}} with row-major flat weights. Python's json writes floats via
repr, which round-trips float64 exactly, so save/load is lossless.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ParseError, ValidationError
from .mlp import Layer, MlpParameters


def mlp_to_dict(params: MlpParameters, meta: dict | None = None) -> dict:
    layers = []
    for layer in params.layers:
        rows, cols = layer.weight.shape
        layers.append(
            {
                "rows": rows,
                "cols": cols,
                "weight": layer.weight.reshape(-1).tolist(),
                "bias": layer.bias.tolist(),
            }
        )
    return {"layers": layers, "meta": meta or {}}


def mlp_from_dict(doc: dict) -> tuple[MlpParameters, dict]:
    if "layers" not in doc:
        raise ValidationError("checkpoint missing 'layers'")
    layers = []
    for i, rec in enumerate(doc["layers"]):
        for field in ("rows", "cols", "weight", "bias"):
            if field not in rec:
                raise ValidationError(f"layer {i} missing '{field}'")
        rows, cols = int(rec["rows"]), int(rec["cols"])
        w = np.asarray(rec["weight"], dtype=np.float64)
        b = np.asarray(rec["bias"], dtype=np.float64)
        if w.size != rows * cols:
            raise ValidationError(f"layer {i}: weight length {w.size} != rows*cols {rows * cols}")
        if b.size != rows:
            raise ValidationError(f"layer {i}: bias length {b.size} != rows {rows}")
        layers.append(Layer(w.reshape(rows, cols), b))
    return MlpParameters(layers), dict(doc.get("meta", {}))


def save_mlp(path: str | Path, params: MlpParameters, meta: dict | None = None) -> None:
    Path(path).write_text(json.dumps(mlp_to_dict(params, meta)))


def load_mlp(path: str | Path) -> tuple[MlpParameters, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid checkpoint JSON in {path}: {exc}") from exc
    return mlp_from_dict(doc)
