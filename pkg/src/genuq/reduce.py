"""Linear (PCA) reduction of high-dimensional target fields to a latent space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _container

MAGIC = b"GQRD"


@dataclass(frozen=True)
class LinearReducer:
    mean: np.ndarray             # (D,)
    basis: np.ndarray            # (D, k), orthonormal columns
    explained_ratio: np.ndarray  # (k,)

    @property
    def D(self) -> int:
        return self.basis.shape[0]

    @property
    def k(self) -> int:
        return self.basis.shape[1]

    def encode(self, field):
        return encode(self, field)

    def decode(self, latent):
        return decode(self, latent)


def fit(fields, k: int) -> LinearReducer:
    """Top-``k`` principal directions of mean-centred rows.

    Each direction is signed so its largest-magnitude coordinate is positive.
    """
    X = np.asarray(fields, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("fields must be an n x D matrix")
    n, D = X.shape
    if n < 2:
        raise ValueError("need at least 2 fields")
    if not 1 <= k <= min(n, D):
        raise ValueError(f"k={k} outside [1, min(n, D)] = [1, {min(n, D)}]")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    basis = vt[:k].T.copy()
    var = s**2
    total = var.sum()
    ratio = var[:k] / total if total > 0 else np.zeros(k)
    idx = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[idx, np.arange(k)])
    signs[signs == 0] = 1.0
    basis *= signs
    return LinearReducer(mean, basis, ratio)


def encode(r: LinearReducer, field):
    field = np.asarray(field, dtype=np.float64)
    if field.shape[-1] != r.D:
        raise ValueError(f"field has dimension {field.shape[-1]}, reducer expects D={r.D}")
    return (field - r.mean) @ r.basis


def decode(r: LinearReducer, latent):
    latent = np.asarray(latent, dtype=np.float64)
    if latent.shape[-1] != r.k:
        raise ValueError(f"latent has dimension {latent.shape[-1]}, reducer expects k={r.k}")
    return r.mean + latent @ r.basis.T


def save(r: LinearReducer, path) -> None:
    _container.write(path, MAGIC, {"kind": "linear_reducer", "D": r.D, "k": r.k},
                     [("mean", r.mean), ("basis", r.basis), ("explained_ratio", r.explained_ratio)])


def load(path) -> LinearReducer:
    _, t = _container.read(path, MAGIC)
    try:
        return LinearReducer(t["mean"], t["basis"], t["explained_ratio"])
    except KeyError as exc:
        raise _container.FormatError(f"{path}: missing tensor {exc}") from None
