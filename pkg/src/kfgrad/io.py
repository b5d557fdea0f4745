"""Model configuration files (JSON) and measurement files (CSV).

A model file is a JSON object::

    {
      "F": [[...]], "H": [[...]], "Q": [[...]], "R": [[...]],
      "P0": [[...]], "x0": [...],
      "B": [[...]],             # optional, needs u1..up columns in the data
      "data": "run.csv"         # optional, relative to the model file
    }

Any of F, H, Q, R, B may instead be a list of per-step matrices. The CSV
has a header row; columns ``y1..ym`` are measurements, ``u1..up`` inputs
and ``x1..xd`` optional ground-truth states.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .filter import FilterModel
from .linalg import DimensionError
from .sim import read_trajectory

__all__ = ["MODEL_SCHEMA", "Problem", "load_problem", "model_to_json", "save_model"]

_matrix = {"type": "array", "minItems": 1,
           "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_matrix_or_steps = {"oneOf": [_matrix, {"type": "array", "minItems": 1, "items": _matrix}]}

MODEL_SCHEMA = {
    "type": "object",
    "required": ["F", "H", "Q", "R", "P0", "x0"],
    "properties": {
        "F": _matrix_or_steps,
        "H": _matrix_or_steps,
        "Q": _matrix_or_steps,
        "R": _matrix_or_steps,
        "B": _matrix_or_steps,
        "P0": _matrix,
        "x0": {"type": "array", "minItems": 1, "items": {"type": "number"}},
        "data": {"type": "string"},
    },
}


@dataclass
class Problem:
    model: FilterModel
    ys: np.ndarray
    truth: np.ndarray | None = None


def _array(value, name):
    arr = np.asarray(value, dtype=np.float64)
    if arr.dtype == object:  # pragma: no cover - ragged input
        raise DimensionError(f"{name} is ragged")
    return arr


def load_problem(model_path, data_path=None) -> Problem:
    """Load a model file and its measurement CSV.

    ``data_path`` overrides the model file's ``data`` entry.
    """
    model_path = Path(model_path)
    with open(model_path) as fh:
        doc = json.load(fh)
    jsonschema.validate(doc, MODEL_SCHEMA)
    if data_path is None:
        if "data" not in doc:
            raise ValueError("no measurement file given (use --data or a 'data' entry)")
        data_path = model_path.parent / doc["data"]
    cols = read_trajectory(data_path)
    if cols["y"] is None:
        raise ValueError(f"{data_path} has no y columns")

    B = _array(doc["B"], "B") if "B" in doc else None
    u = cols["u"] if B is not None else None
    if B is not None and u is None:
        raise ValueError("model has B but the data file has no u columns")
    model = FilterModel(
        F=_array(doc["F"], "F"), H=_array(doc["H"], "H"),
        Q=_array(doc["Q"], "Q"), R=_array(doc["R"], "R"),
        P0=_array(doc["P0"], "P0"), x0=_array(doc["x0"], "x0"),
        B=B, u=u,
    )
    return Problem(model, cols["y"], cols["x"])


def model_to_json(model: FilterModel, data: str | None = None) -> dict:
    doc = {name: getattr(model, name).tolist() for name in ("F", "H", "Q", "R", "P0", "x0")}
    if model.B is not None:
        doc["B"] = model.B.tolist()
    if data is not None:
        doc["data"] = data
    return doc


def save_model(path, model: FilterModel, data: str | None = None) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(model_to_json(model, data), fh, indent=2)
        fh.write("\n")
    return path
