"""Reading and writing point clouds.

CSV: one point per row, ``d`` float columns, optionally a header line; a final
column named ``weight`` holds the weights. JSON: ``{"points": [[...]], "weights": [...]}``.
Missing weights mean uniform; given weights are rescaled to sum to one.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core import DiscreteMeasure


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def _measure(points, weights):
    if weights is None:
        return DiscreteMeasure(points)
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and strictly positive")
    return DiscreteMeasure.normalized(points, w)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        raise ValueError(f"{path}: no points")
    header = None
    if not all(_is_number(c) for c in rows[0]):
        header = [c.strip().lower() for c in rows[0]]
        rows = rows[1:]
    data = np.array([[float(c) for c in row] for row in rows], dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError(f"{path}: rows have inconsistent lengths or no data")
    if header is not None and header[-1] == "weight":
        return _measure(data[:, :-1], data[:, -1])
    return _measure(data, None)


def read_json(path):
    with open(path) as fh:
        data = json.load(fh)
    return _measure(np.asarray(data["points"], dtype=np.float64), data.get("weights"))


def load_measure(path):
    """Load a point cloud from ``.csv`` or ``.json``."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return read_json(path)
    return read_csv(path)


def save_measure(path, measure, weights=True):
    """Write a measure; CSV gets a header ``x0,...,x{d-1}[,weight]``."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        payload = {"points": measure.points.tolist()}
        if weights:
            payload["weights"] = measure.weights.tolist()
        path.write_text(json.dumps(payload))
        return
    cols = [f"x{i}" for i in range(measure.dim)] + (["weight"] if weights else [])
    data = np.column_stack([measure.points, measure.weights]) if weights else measure.points
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in data:
            writer.writerow([repr(float(x)) for x in row])
