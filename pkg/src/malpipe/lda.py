"""Fisher linear discriminant projection of the attention representation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FitError, NumericError, ShapeError
from .numerics import cholesky, sym_eig, tri_solve

DEFAULT_K = 14
SHRINKAGE_SCALE = 1e-4


@dataclass
class LdaModel:
    components: np.ndarray  # d x k, unit-norm columns
    mean: np.ndarray
    class_means: np.ndarray
    shrinkage: float
    eigenvalues: np.ndarray

    def __post_init__(self):
        w = self.components
        if w.ndim != 2 or not np.all(np.isfinite(w)):
            raise FitError("projection matrix must be a finite 2-D array")
        if self.k > max(self.class_means.shape[0] - 1, 0) or self.k > self.n_features:
            raise FitError(f"k={self.k} exceeds min(C-1, d)")
        if self.k and not np.allclose(np.linalg.norm(w, axis=0), 1.0, atol=1e-9):
            raise FitError("projection columns must be unit-norm")

    @property
    def k(self):
        return self.components.shape[1]

    @property
    def n_features(self):
        return self.components.shape[0]

    def transform(self, z):
        return transform(self, z)


def _class_stats(z, y, n_classes):
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    counts = np.bincount(y, minlength=n_classes)[:n_classes]
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise FitError(f"class {int(empty[0])} has no samples")
    means = np.stack([z[y == c].mean(axis=0) for c in range(n_classes)])
    return z, y, counts, means


def scatter_matrices(z, y, n_classes):
    """Between-class and within-class scatter ``(S_b, S_w)``."""
    z, y, counts, means = _class_stats(z, y, n_classes)
    mu = z.mean(axis=0)
    centred = z - means[y]
    s_w = centred.T @ centred
    diff = means - mu
    s_b = (diff * counts[:, None]).T @ diff
    return 0.5 * (s_b + s_b.T), 0.5 * (s_w + s_w.T)


def fit(z, y, n_classes, k=DEFAULT_K, shrinkage=None):
    """Top-k eigenvectors of ``(S_w + eps I)^-1 S_b``.

    Solved as a symmetric problem: with ``S_w + eps I = L L^T`` the matrix
    ``L^-1 S_b L^-T`` is symmetric and shares the eigenvalues; directions
    map back through ``L^-T``. ``shrinkage=None`` uses ``1e-4 trace(S_w)/d``.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"expected a 2-D representation matrix, got {z.shape}")
    d = z.shape[1]
    if not 1 <= k <= min(n_classes - 1, d):
        raise ConfigError(f"k={k} must be in [1, min(C-1={n_classes - 1}, d={d})]")
    s_b, s_w = scatter_matrices(z, y, n_classes)
    if shrinkage is None:
        shrinkage = SHRINKAGE_SCALE * float(np.trace(s_w)) / d
        if shrinkage <= 0.0:
            shrinkage = SHRINKAGE_SCALE
    elif shrinkage < 0.0:
        raise ConfigError(f"shrinkage must be >= 0, got {shrinkage}")
    reg = s_w + shrinkage * np.eye(d)
    try:
        low = cholesky(reg)
    except NumericError as exc:
        raise NumericError(f"within-class scatter is singular ({exc}); use a positive shrinkage") from exc
    half = tri_solve(low, s_b)
    sym = tri_solve(low, half.T)
    vals, vecs = sym_eig(0.5 * (sym + sym.T))
    dirs = tri_solve(low, vecs[:, :k], transpose=True)
    dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
    # sign convention: the largest-magnitude entry of each column is positive
    pivot = np.argmax(np.abs(dirs), axis=0)
    signs = np.sign(dirs[pivot, np.arange(k)])
    dirs *= np.where(signs == 0, 1.0, signs)
    _, _, _, means = _class_stats(z, y, n_classes)
    return LdaModel(dirs, z.mean(axis=0), means, float(shrinkage), vals)


def transform(model, z):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != model.n_features:
        raise ShapeError(f"expected width {model.n_features}, got shape {z.shape}")
    return z @ model.components
