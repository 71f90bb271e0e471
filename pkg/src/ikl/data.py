"""Synthetic datasets, label-first CSV files, and JSON persistence."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import Mlp, Prng
from .spectral import spec_from_dict


class DataError(ValueError):
    pass


@dataclass(eq=False)
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    split: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise DataError(f"X has shape {self.X.shape} but there are {self.y.shape[0]} labels")
        if not np.all((self.y == 1) | (self.y == -1)):
            raise DataError("labels must be -1 or +1")

    def __len__(self):
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx, split=None) -> "LabeledDataset":
        return LabeledDataset(self.X[idx], self.y[idx], self.split if split is None else split)


def gen_norm_sphere(n: int, d: int, prng: Prng, split: str = "") -> LabeledDataset:
    """``x ~ N(0, I_d)`` labelled by which side of the radius-sqrt(d) sphere it falls on."""
    if n < 1 or d < 1:
        raise ValueError("need n, d >= 1")
    X = prng.normal((n, d))
    return LabeledDataset(X, sphere_labels(X), split)


def sphere_labels(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return np.where(np.linalg.norm(X, axis=1) - np.sqrt(X.shape[1]) >= 0, 1, -1)


def ring_centers(modes: int, radius: float) -> np.ndarray:
    angles = 2 * np.pi * np.arange(modes) / modes
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


def gen_ring_mixture(n: int, modes: int, radius: float, sigma: float, prng: Prng) -> np.ndarray:
    """``n`` points from an equal-weight mixture of isotropic Gaussians on a circle."""
    if modes < 1:
        raise ValueError("need at least one mode")
    which = prng.child("mode").integers(0, modes, n)
    return ring_centers(modes, radius)[which] + sigma * prng.child("noise").normal((n, 2))


# CSV

def load_csv(path, header: bool = False) -> LabeledDataset:
    rows, labels = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: cannot parse row ({exc})") from None
            if len(vals) < 2:
                raise DataError(f"{path}:{lineno}: need a label and at least one feature")
            if vals[0] not in (1.0, -1.0):
                raise DataError(f"{path}:{lineno}: label {row[0]!r} is not -1 or +1")
            if rows and len(vals) - 1 != len(rows[0]):
                raise DataError(f"{path}:{lineno}: expected {len(rows[0])} features, got {len(vals) - 1}")
            labels.append(int(vals[0]))
            rows.append(vals[1:])
    if not rows:
        raise DataError(f"{path}: dataset is empty")
    return LabeledDataset(np.array(rows), np.array(labels), Path(path).stem)


def save_csv(path, data: LabeledDataset):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for label, x in zip(data.y, data.X):
            w.writerow([int(label)] + [repr(float(v)) for v in x])


def save_points_csv(path, points, header=("x", "y")):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(header)
        for p in np.asarray(points, dtype=np.float64):
            w.writerow([repr(float(v)) for v in p])


# JSON

def save_json(path, obj):
    doc = obj.to_dict() if hasattr(obj, "to_dict") else obj
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


def load_mlp(path) -> Mlp:
    return Mlp.from_dict(load_json(path))


def load_spec(path):
    return spec_from_dict(load_json(path))
