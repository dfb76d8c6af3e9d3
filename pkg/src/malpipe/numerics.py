"""Dense linear algebra and elementwise functions shared by every stage.

Matrices are plain ``float64`` numpy arrays. Random streams come from
:func:`make_rng`, which always uses numpy's PCG64 bit generator so a seed
maps to the same draws on every platform.
"""
import numpy as np

from . import kernels
from .errors import ConfigError, NumericError, ShapeError

LEAKY_SLOPE = 0.01
EIG_MAX_SWEEPS = 100
EIG_REL_TOL = 1e-15
SYMMETRY_TOL = 1e-9

ACTIVATIONS = ("relu", "tanh", "leaky_relu")


def make_rng(seed):
    """Seeded generator; fixed to PCG64 so streams are stable across builds."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_matrix(a, name="matrix"):
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_rows(m):
    m = np.asarray(m, dtype=np.float64)
    shifted = m - np.max(m, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def activate(kind, m):
    m = np.asarray(m, dtype=np.float64)
    if kind == "relu":
        return np.maximum(m, 0.0)
    if kind == "tanh":
        return np.tanh(m)
    if kind == "leaky_relu":
        return np.where(m > 0.0, m, LEAKY_SLOPE * m)
    raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activate_grad(kind, pre, post):
    """Derivative of the activation w.r.t. its pre-activation input."""
    if kind == "relu":
        return (pre > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - post * post
    if kind == "leaky_relu":
        return np.where(pre > 0.0, 1.0, LEAKY_SLOPE)
    raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def _check_square(s, name):
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {s.shape}")


def sym_eig(s):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues descending and
    eigenvectors as unit-norm columns.
    """
    s = np.asarray(s, dtype=np.float64)
    _check_square(s, "sym_eig input")
    scale = max(1.0, float(np.max(np.abs(s)))) if s.size else 1.0
    if not np.allclose(s, s.T, rtol=0.0, atol=SYMMETRY_TOL * scale):
        raise ShapeError("sym_eig input is not symmetric within 1e-9")
    if s.shape[0] == 0:
        return np.zeros(0), np.zeros((0, 0))
    sym = 0.5 * (s + s.T)
    vals, vecs, sweeps = kernels.jacobi_eigh(np.ascontiguousarray(sym), EIG_MAX_SWEEPS, EIG_REL_TOL)
    if sweeps < 0:
        raise NumericError(f"Jacobi eigensolver did not converge in {EIG_MAX_SWEEPS} sweeps")
    # stable sort keeps equal eigenvalues in rotation order
    order = np.argsort(-vals, kind="stable")
    return vals[order], vecs[:, order]


def cholesky(a):
    a = np.asarray(a, dtype=np.float64)
    _check_square(a, "cholesky input")
    low, bad = kernels.cholesky(np.ascontiguousarray(a))
    if bad >= 0:
        raise NumericError(f"matrix is not positive definite: pivot {bad} is not > 0")
    return low


def tri_solve(low, b, transpose=False):
    """Solve ``low @ x = b`` (or ``low.T @ x = b``) for lower-triangular ``low``."""
    b = np.ascontiguousarray(np.asarray(b, dtype=np.float64))
    if transpose:
        return kernels.back_sub_t(low, b)
    return kernels.forward_sub(low, b)


def solve_spd(a, b):
    """Solve ``a @ x = b`` for symmetric positive definite ``a``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    vector = b.ndim == 1
    if vector:
        b = b[:, None]
    _check_square(a, "solve_spd matrix")
    if b.shape[0] != a.shape[0]:
        raise ShapeError(f"cannot solve {a.shape} system with right-hand side {b.shape}")
    low = cholesky(a)
    x = tri_solve(low, tri_solve(low, b), transpose=True)
    return x[:, 0] if vector else x
