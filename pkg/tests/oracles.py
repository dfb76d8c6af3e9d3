"""Independent reference computations used by several test modules."""
import numpy as np
from cvxopt import matrix, solvers

solvers.options.update(show_progress=False, abstol=1e-12, reltol=1e-12, feastol=1e-12, maxiters=200)


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def svm_dual_optimum(k, y, c):
    """Optimal dual objective of the soft-margin SVM by an interior-point QP."""
    n = y.size
    cbox = np.broadcast_to(np.asarray(c, dtype=np.float64), (n,))
    q = np.outer(y, y) * k + 1e-14 * np.eye(n)
    sol = solvers.qp(
        matrix(q),
        matrix(-np.ones(n)),
        matrix(np.vstack([-np.eye(n), np.eye(n)])),
        matrix(np.r_[np.zeros(n), cbox]),
        matrix(y.reshape(1, -1)),
        matrix(0.0),
    )
    a = np.clip(np.array(sol["x"]).ravel(), 0.0, cbox)
    ay = a * y
    return float(a.sum() - 0.5 * ay @ k @ ay)


def kkt_violation(alpha, y, margins, cbox, tol):
    yf = y * margins
    lower = np.maximum(0.0, 1.0 - tol - yf)
    upper = np.maximum(0.0, yf - 1.0 - tol)
    free = np.maximum(0.0, np.abs(yf - 1.0) - tol)
    v = np.where(alpha <= 0.0, lower, np.where(alpha >= cbox, upper, free))
    return float(v.max())


def shapley_brute(f, baseline, instance):
    """Shapley values from the permutation definition (all d! orderings)."""
    from itertools import permutations

    d = len(instance)
    phi = np.zeros(d)
    count = 0
    for perm in permutations(range(d)):
        x = np.array(baseline, dtype=np.float64)
        prev = f(x[None, :])[0]
        for j in perm:
            x[j] = instance[j]
            cur = f(x[None, :])[0]
            phi[j] += cur - prev
            prev = cur
        count += 1
    return phi / count
