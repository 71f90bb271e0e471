"""Random Fourier feature maps and kernel matrices."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .spectral import FrequencyBatch, kernel_from_sqdist


class ProvenanceError(ValueError):
    """Feature maps built from different frequency batches were combined."""


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Rows are ``(1/sqrt(m)) [cos(w_j.x), sin(w_j.x)]``; cosines first, then sines."""

    features: np.ndarray
    freqs: FrequencyBatch

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def cos(self) -> np.ndarray:
        return self.features[:, :self.freqs.m]

    @property
    def sin(self) -> np.ndarray:
        return self.features[:, self.freqs.m:]


def phases(X, omegas) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    omegas = np.asarray(omegas, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != omegas.shape[1]:
        raise ValueError(f"data has shape {X.shape}, frequencies have dimension {omegas.shape[1]}")
    return X @ omegas.T


def fourier_features(X, freqs: FrequencyBatch) -> FeatureMap:
    p = phases(X, freqs.omegas)
    scale = 1.0 / np.sqrt(freqs.m)
    return FeatureMap(np.hstack([np.cos(p), np.sin(p)]) * scale, freqs)


def features_vjp(X, omegas, upstream):
    """Pull ``upstream`` (shaped like the feature matrix) back to ``X`` and ``omegas``."""
    X = np.asarray(X, dtype=np.float64)
    omegas = np.asarray(omegas, dtype=np.float64)
    p = phases(X, omegas)
    m = omegas.shape[0]
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != (X.shape[0], 2 * m):
        raise ValueError(f"upstream must be {(X.shape[0], 2 * m)}, got {g.shape}")
    d_p = (np.cos(p) * g[:, m:] - np.sin(p) * g[:, :m]) / np.sqrt(m)
    return d_p @ omegas, d_p.T @ X


def _same_batch(a: FeatureMap, b: FeatureMap):
    if a.freqs is not b.freqs and not np.array_equal(a.freqs.omegas, b.freqs.omegas):
        raise ProvenanceError("feature maps come from different frequency batches")


def kernel_matrix_approx(phi_x: FeatureMap, phi_y: FeatureMap) -> np.ndarray:
    _same_batch(phi_x, phi_y)
    return phi_x.features @ phi_y.features.T


def sqdist(X, Y) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise ValueError(f"incompatible shapes {X.shape} and {Y.shape}")
    d = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def kernel_matrix_exact(spec, X, Y) -> np.ndarray:
    return kernel_from_sqdist(spec, sqdist(X, Y))


def save_features_csv(path, fmap: FeatureMap, labels=None):
    """One row per example; labels (if given) go in the first column."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for i, row in enumerate(fmap.features):
            vals = [repr(float(v)) for v in row]
            if labels is not None:
                vals.insert(0, str(int(labels[i])))
            w.writerow(vals)
