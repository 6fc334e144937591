"""Model files (versioned JSON) and level/gain dataset CSVs."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import DataError, ModelFormatError, ShapeError
from .prescription import Mlp, TrainingSet

MODEL_FORMAT = "nnhacore-prescription"
MODEL_VERSION = 1


def model_to_dict(mlp: Mlp) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "layer_sizes": mlp.layer_sizes,
        "activations": {"hidden": mlp.hidden_activation, "output": mlp.output_activation},
        "normalization": {
            "input": {"offset_db": mlp.input_norm[0], "scale_db": mlp.input_norm[1]},
            "output": {"offset_db": mlp.output_norm[0], "scale_db": mlp.output_norm[1]},
        },
        # row-major: weights[i][r] is the input weight row of output unit r
        "weights": [w.tolist() for w in mlp.weights],
        "biases": [b.tolist() for b in mlp.biases],
    }


def model_from_dict(doc) -> Mlp:
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    if doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"not a prescription model file (format={doc.get('format')!r})")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(
            f"unsupported model version {doc.get('version')!r}, expected {MODEL_VERSION}"
        )
    try:
        sizes = [int(s) for s in doc["layer_sizes"]]
        weights = doc["weights"]
        biases = doc["biases"]
        act = doc["activations"]
        norm = doc["normalization"]
        input_norm = (norm["input"]["offset_db"], norm["input"]["scale_db"])
        output_norm = (norm["output"]["offset_db"], norm["output"]["scale_db"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"model file is missing or has a bad field: {exc}") from exc
    if len(weights) != len(sizes) - 1 or len(biases) != len(sizes) - 1:
        raise ModelFormatError(
            f"layer_sizes {sizes} needs {len(sizes) - 1} weight matrices and bias vectors, "
            f"got {len(weights)} and {len(biases)}"
        )
    arrays_w, arrays_b = [], []
    for i, (w, b) in enumerate(zip(weights, biases)):
        expected = (sizes[i + 1], sizes[i])
        try:
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ModelFormatError(f"layer {i}: non-numeric or ragged parameters") from exc
        if w.shape != expected:
            raise ModelFormatError(f"layer {i}: weight shape {w.shape} does not match {expected}")
        if b.shape != (expected[0],):
            raise ModelFormatError(f"layer {i}: bias length {b.size} does not match {expected[0]}")
        arrays_w.append(w)
        arrays_b.append(b)
    try:
        return Mlp(arrays_w, arrays_b, act["hidden"], act["output"], input_norm, output_norm)
    except (ShapeError, ValueError, KeyError, TypeError) as exc:
        raise ModelFormatError(str(exc)) from exc


def save_model(mlp: Mlp, path) -> None:
    # json writes floats with repr, which round-trips float64 exactly
    text = json.dumps(model_to_dict(mlp), indent=1, allow_nan=False)
    Path(path).write_text(text + "\n")


def load_model(path) -> Mlp:
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: malformed model file ({exc.msg})") from exc
    try:
        return model_from_dict(doc)
    except ModelFormatError as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc


def dataset_header(num_bands: int) -> list[str]:
    return [f"level_{m}" for m in range(num_bands)] + [f"gain_{m}" for m in range(num_bands)]


def write_dataset(data: TrainingSet, path) -> None:
    num_bands = data.inputs.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset_header(num_bands))
        for x, y in zip(data.inputs, data.targets):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])


def read_dataset(path, num_bands: int) -> TrainingSet:
    """Read a CSV with ``num_bands`` level columns then ``num_bands`` gain columns.

    Raises:
        DataError: missing/incorrect header, bad row width or non-numeric cell.
    """
    expected = dataset_header(num_bands)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file, header required")
    header = [c.strip() for c in rows[0]]
    if header != expected:
        raise DataError(f"{path}: header {header} does not match {expected}")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2 * num_bands:
            raise DataError(f"{path}:{lineno}: expected {2 * num_bands} columns, got {len(row)}")
        try:
            values.append([float(c) for c in row])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    arr = np.array(values, dtype=np.float64).reshape(-1, 2 * num_bands)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: non-finite values")
    return TrainingSet(arr[:, :num_bands], arr[:, num_bands:])
