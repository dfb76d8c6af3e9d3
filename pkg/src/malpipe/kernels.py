"""Hot inner loops, each in two flavours.

``*_numba`` functions are explicit loops compiled with ``@njit``; ``*_numpy``
functions compute the same thing with vectorised numpy. The unsuffixed
names are bound once at import time according to ``_accel.USE_NUMBA``.
Both flavours follow the same arithmetic sequence where that matters
(Jacobi rotations, SMO pair updates), so they agree to rounding.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# splitmix64 constants; the SMO partner stream uses this generator in both
# backends so the two paths pick the same partners.
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK64 = 0xFFFFFFFFFFFFFFFF

SMO_POLISH_EPS = 1e-9
_TAU = 1e-12


# ---------------------------------------------------------------------------
# Jacobi eigensolver


@njit
def jacobi_eigh_numba(a, max_sweeps, rel_tol):
    """Cyclic Jacobi; returns ``(eigenvalues, eigenvectors, sweeps)``.

    ``sweeps`` is -1 when the off-diagonal mass is still above threshold
    after ``max_sweeps``. Eigenvectors are accumulated as rows and
    transposed at the end to keep every update contiguous.
    """
    n = a.shape[0]
    a = a.copy()
    vt = np.eye(n)
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += a[i, j] * a[i, j]
    thresh = rel_tol * rel_tol * total
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += a[i, j] * a[i, j]
        if off <= thresh:
            return np.diag(a).copy(), vt.T.copy(), sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    if k == p or k == q:
                        continue
                    akp = a[p, k]
                    akq = a[q, k]
                    nkp = c * akp - s * akq
                    nkq = s * akp + c * akq
                    a[p, k] = nkp
                    a[k, p] = nkp
                    a[q, k] = nkq
                    a[k, q] = nkq
                a[p, p] = a[p, p] - t * apq
                a[q, q] = a[q, q] + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = vt[p, k]
                    vkq = vt[q, k]
                    vt[p, k] = c * vkp - s * vkq
                    vt[q, k] = s * vkp + c * vkq
    return np.diag(a).copy(), vt.T.copy(), -1


def jacobi_eigh_numpy(a, max_sweeps, rel_tol):
    n = a.shape[0]
    a = np.array(a, dtype=np.float64, copy=True)
    vt = np.eye(n)
    off_mask = ~np.eye(n, dtype=bool)
    thresh = rel_tol * rel_tol * float(np.sum(a * a))
    for sweep in range(max_sweeps + 1):
        if float(np.sum(a[off_mask] ** 2)) <= thresh:
            return np.diag(a).copy(), vt.T.copy(), sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                app = a[p, p]
                aqq = a[q, q]
                rp = a[p].copy()
                rq = a[q].copy()
                a[p] = c * rp - s * rq
                a[q] = s * rp + c * rq
                a[:, p] = a[p]
                a[:, q] = a[q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = vt[p].copy()
                vq = vt[q].copy()
                vt[p] = c * vp - s * vq
                vt[q] = s * vp + c * vq
    return np.diag(a).copy(), vt.T.copy(), -1


# ---------------------------------------------------------------------------
# Cholesky and triangular solves


@njit
def cholesky_numba(a):
    """Lower factor and failing pivot index (-1 on success)."""
    n = a.shape[0]
    low = np.zeros((n, n))
    for j in range(n):
        d = a[j, j]
        for k in range(j):
            d -= low[j, k] * low[j, k]
        if not d > 0.0:
            return low, j
        ljj = np.sqrt(d)
        low[j, j] = ljj
        for i in range(j + 1, n):
            acc = a[i, j]
            for k in range(j):
                acc -= low[i, k] * low[j, k]
            low[i, j] = acc / ljj
    return low, -1


def cholesky_numpy(a):
    n = a.shape[0]
    low = np.zeros((n, n))
    for j in range(n):
        d = a[j, j] - low[j, :j] @ low[j, :j]
        if not d > 0.0:
            return low, j
        ljj = np.sqrt(d)
        low[j, j] = ljj
        if j + 1 < n:
            low[j + 1:, j] = (a[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]) / ljj
    return low, -1


@njit
def forward_sub_numba(low, b):
    n, m = b.shape
    x = np.zeros((n, m))
    for c in range(m):
        for i in range(n):
            acc = b[i, c]
            for k in range(i):
                acc -= low[i, k] * x[k, c]
            x[i, c] = acc / low[i, i]
    return x


@njit
def back_sub_t_numba(low, b):
    """Solve ``low.T @ x = b``."""
    n, m = b.shape
    x = np.zeros((n, m))
    for c in range(m):
        for i in range(n - 1, -1, -1):
            acc = b[i, c]
            for k in range(i + 1, n):
                acc -= low[k, i] * x[k, c]
            x[i, c] = acc / low[i, i]
    return x


def forward_sub_numpy(low, b):
    n = b.shape[0]
    x = np.zeros(b.shape)
    for i in range(n):
        x[i] = (b[i] - low[i, :i] @ x[:i]) / low[i, i]
    return x


def back_sub_t_numpy(low, b):
    n = b.shape[0]
    x = np.zeros(b.shape)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - low[i + 1:, i] @ x[i + 1:]) / low[i, i]
    return x


# ---------------------------------------------------------------------------
# Kernel matrices


@njit
def rbf_gram_numba(u, v, gamma):
    n, d = u.shape
    m = v.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = u[i, k] - v[j, k]
                acc += diff * diff
            out[i, j] = np.exp(-gamma * acc)
    return out


def rbf_gram_numpy(u, v, gamma):
    sq = (
        np.sum(u * u, axis=1)[:, None]
        + np.sum(v * v, axis=1)[None, :]
        - 2.0 * (u @ v.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


# ---------------------------------------------------------------------------
# Sequential minimal optimisation


@njit
def _splitmix_next(state):
    state = state + np.uint64(_GOLDEN)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return state, z ^ (z >> np.uint64(31))


def _splitmix_next_py(state):
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return state, z ^ (z >> 31)


@njit
def _clip_pair(ai, aj, yi_eq_yj, ci, cj):
    if not yi_eq_yj:
        diff = ai - aj
        if diff > 0.0:
            if aj < 0.0:
                aj = 0.0
                ai = diff
        else:
            if ai < 0.0:
                ai = 0.0
                aj = -diff
        if diff > ci - cj:
            if ai > ci:
                ai = ci
                aj = ci - diff
        else:
            if aj > cj:
                aj = cj
                ai = cj + diff
    else:
        total = ai + aj
        if total > ci:
            if ai > ci:
                ai = ci
                aj = total - ci
        else:
            if aj < 0.0:
                aj = 0.0
                ai = total
        if total > cj:
            if aj > cj:
                aj = cj
                ai = total - cj
        else:
            if ai < 0.0:
                ai = 0.0
                aj = total
    return ai, aj


_clip_pair_py = getattr(_clip_pair, "py_func", _clip_pair)


@njit
def smo_numba(gram, y, cbox, tol, max_passes, seed, polish_eps, max_polish):
    """Returns ``(alpha, b, passes, polish_iterations)``."""
    n = y.shape[0]
    alpha = np.zeros(n)
    # f[i] = sum_j alpha_j y_j K_ij, excluding the bias
    f = np.zeros(n)
    b = 0.0
    state = np.uint64(seed)
    passes = 0
    while passes < max_passes:
        passes += 1
        changed = 0
        for i in range(n):
            ei = f[i] + b - y[i]
            if (y[i] * ei < -tol and alpha[i] < cbox[i]) or (y[i] * ei > tol and alpha[i] > 0.0):
                state, r = _splitmix_next(state)
                j = np.int64(r % np.uint64(n - 1))
                if j >= i:
                    j += 1
                ej = f[j] + b - y[j]
                ai_old = alpha[i]
                aj_old = alpha[j]
                if y[i] != y[j]:
                    lo = max(0.0, aj_old - ai_old)
                    hi = min(cbox[j], cbox[i] + aj_old - ai_old)
                else:
                    lo = max(0.0, ai_old + aj_old - cbox[i])
                    hi = min(cbox[j], ai_old + aj_old)
                if lo >= hi:
                    continue
                eta = 2.0 * gram[i, j] - gram[i, i] - gram[j, j]
                if eta >= 0.0:
                    continue
                aj = aj_old - y[j] * (ei - ej) / eta
                if aj > hi:
                    aj = hi
                elif aj < lo:
                    aj = lo
                if abs(aj - aj_old) < 1e-12 * (1.0 + aj_old):
                    continue
                ai = ai_old + y[i] * y[j] * (aj_old - aj)
                if ai < 0.0:
                    ai = 0.0
                elif ai > cbox[i]:
                    ai = cbox[i]
                dai = ai - ai_old
                daj = aj - aj_old
                b1 = b - ei - y[i] * dai * gram[i, i] - y[j] * daj * gram[i, j]
                b2 = b - ej - y[i] * dai * gram[i, j] - y[j] * daj * gram[j, j]
                if 0.0 < ai < cbox[i]:
                    b = b1
                elif 0.0 < aj < cbox[j]:
                    b = b2
                else:
                    b = 0.5 * (b1 + b2)
                alpha[i] = ai
                alpha[j] = aj
                for t in range(n):
                    f[t] += y[i] * dai * gram[t, i] + y[j] * daj * gram[t, j]
                changed += 1
        if changed == 0:
            break

    # Polish with maximal-violating-pair steps on G = Q alpha - 1.
    grad = np.empty(n)
    for t in range(n):
        grad[t] = y[t] * f[t] - 1.0
    it = 0
    while it < max_polish:
        gmax = -np.inf
        gmin = np.inf
        i = -1
        j = -1
        for t in range(n):
            v = -y[t] * grad[t]
            up = (y[t] > 0 and alpha[t] < cbox[t]) or (y[t] < 0 and alpha[t] > 0.0)
            low = (y[t] < 0 and alpha[t] < cbox[t]) or (y[t] > 0 and alpha[t] > 0.0)
            if up and v > gmax:
                gmax = v
                i = t
            if low and v < gmin:
                gmin = v
                j = t
        if i < 0 or j < 0 or gmax - gmin <= polish_eps:
            break
        it += 1
        kij = gram[i, j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        same = y[i] == y[j]
        if not same:
            quad = gram[i, i] + gram[j, j] - 2.0 * kij
            if quad <= 0.0:
                quad = _TAU
            delta = (-grad[i] - grad[j]) / quad
            ai = ai_old + delta
            aj = aj_old + delta
        else:
            quad = gram[i, i] + gram[j, j] - 2.0 * kij
            if quad <= 0.0:
                quad = _TAU
            delta = (grad[i] - grad[j]) / quad
            ai = ai_old - delta
            aj = aj_old + delta
        ai, aj = _clip_pair(ai, aj, same, cbox[i], cbox[j])
        dai = ai - ai_old
        daj = aj - aj_old
        alpha[i] = ai
        alpha[j] = aj
        for t in range(n):
            grad[t] += y[t] * (y[i] * dai * gram[t, i] + y[j] * daj * gram[t, j])
    b = _bias_from_grad(alpha, y, grad, cbox)
    return alpha, b, passes, it


@njit
def _bias_from_grad(alpha, y, grad, cbox):
    n = y.shape[0]
    ub = np.inf
    lb = -np.inf
    acc = 0.0
    nfree = 0
    for t in range(n):
        yg = y[t] * grad[t]
        if alpha[t] >= cbox[t]:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0.0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            nfree += 1
            acc += yg
    if nfree > 0:
        rho = acc / nfree
    else:
        rho = 0.5 * (ub + lb)
    return -rho


_bias_from_grad_py = getattr(_bias_from_grad, "py_func", _bias_from_grad)


def smo_numpy(gram, y, cbox, tol, max_passes, seed, polish_eps, max_polish):
    n = y.shape[0]
    alpha = np.zeros(n)
    f = np.zeros(n)
    b = 0.0
    state = int(seed) & _MASK64
    passes = 0
    while passes < max_passes:
        passes += 1
        changed = 0
        for i in range(n):
            ei = f[i] + b - y[i]
            if (y[i] * ei < -tol and alpha[i] < cbox[i]) or (y[i] * ei > tol and alpha[i] > 0.0):
                state, r = _splitmix_next_py(state)
                j = r % (n - 1)
                if j >= i:
                    j += 1
                ej = f[j] + b - y[j]
                ai_old = alpha[i]
                aj_old = alpha[j]
                if y[i] != y[j]:
                    lo = max(0.0, aj_old - ai_old)
                    hi = min(cbox[j], cbox[i] + aj_old - ai_old)
                else:
                    lo = max(0.0, ai_old + aj_old - cbox[i])
                    hi = min(cbox[j], ai_old + aj_old)
                if lo >= hi:
                    continue
                eta = 2.0 * gram[i, j] - gram[i, i] - gram[j, j]
                if eta >= 0.0:
                    continue
                aj = aj_old - y[j] * (ei - ej) / eta
                aj = min(max(aj, lo), hi)
                if abs(aj - aj_old) < 1e-12 * (1.0 + aj_old):
                    continue
                ai = ai_old + y[i] * y[j] * (aj_old - aj)
                ai = min(max(ai, 0.0), cbox[i])
                dai = ai - ai_old
                daj = aj - aj_old
                b1 = b - ei - y[i] * dai * gram[i, i] - y[j] * daj * gram[i, j]
                b2 = b - ej - y[i] * dai * gram[i, j] - y[j] * daj * gram[j, j]
                if 0.0 < ai < cbox[i]:
                    b = b1
                elif 0.0 < aj < cbox[j]:
                    b = b2
                else:
                    b = 0.5 * (b1 + b2)
                alpha[i] = ai
                alpha[j] = aj
                f += y[i] * dai * gram[:, i] + y[j] * daj * gram[:, j]
                changed += 1
        if changed == 0:
            break

    grad = y * f - 1.0
    pos = y > 0
    it = 0
    while it < max_polish:
        v = -y * grad
        below = alpha < cbox
        above = alpha > 0.0
        up = (pos & below) | (~pos & above)
        low = (~pos & below) | (pos & above)
        if not up.any() or not low.any():
            break
        i = int(np.argmax(np.where(up, v, -np.inf)))
        j = int(np.argmin(np.where(low, v, np.inf)))
        if v[i] - v[j] <= polish_eps:
            break
        it += 1
        ai_old = alpha[i]
        aj_old = alpha[j]
        same = y[i] == y[j]
        quad = gram[i, i] + gram[j, j] - 2.0 * gram[i, j]
        if quad <= 0.0:
            quad = _TAU
        if not same:
            delta = (-grad[i] - grad[j]) / quad
            ai, aj = ai_old + delta, aj_old + delta
        else:
            delta = (grad[i] - grad[j]) / quad
            ai, aj = ai_old - delta, aj_old + delta
        ai, aj = _clip_pair_py(ai, aj, same, cbox[i], cbox[j])
        dai = ai - ai_old
        daj = aj - aj_old
        alpha[i] = ai
        alpha[j] = aj
        grad += y * (y[i] * dai * gram[:, i] + y[j] * daj * gram[:, j])
    b = _bias_from_grad_py(alpha, y, grad, cbox)
    return alpha, b, passes, it


# ---------------------------------------------------------------------------
# Shapley coalition accumulation


def shapley_weights(d):
    """``|S|! (d-|S|-1)! / d!`` for coalition sizes 0..d-1."""
    w = np.empty(d)
    w[0] = 1.0 / d
    for s in range(1, d):
        # ratio of consecutive weights is s / (d - s)
        w[s] = w[s - 1] * s / (d - s)
    return w


@njit
def shapley_accumulate_numba(values, weights, d):
    phi = np.zeros(d)
    full = 1 << d
    for mask in range(full):
        size = 0
        m = mask
        while m:
            size += m & 1
            m >>= 1
        for j in range(d):
            bit = 1 << j
            if mask & bit:
                continue
            phi[j] += weights[size] * (values[mask | bit] - values[mask])
    return phi


def shapley_accumulate_numpy(values, weights, d):
    masks = np.arange(1 << d)
    sizes = np.zeros(1 << d, dtype=np.int64)
    for j in range(d):
        sizes += (masks >> j) & 1
    phi = np.zeros(d)
    for j in range(d):
        bit = 1 << j
        without = masks[(masks & bit) == 0]
        phi[j] = np.sum(weights[sizes[without]] * (values[without | bit] - values[without]))
    return phi


if USE_NUMBA:
    jacobi_eigh = jacobi_eigh_numba
    cholesky = cholesky_numba
    forward_sub = forward_sub_numba
    back_sub_t = back_sub_t_numba
    rbf_gram = rbf_gram_numba
    smo = smo_numba
    shapley_accumulate = shapley_accumulate_numba
else:
    jacobi_eigh = jacobi_eigh_numpy
    cholesky = cholesky_numpy
    forward_sub = forward_sub_numpy
    back_sub_t = back_sub_t_numpy
    rbf_gram = rbf_gram_numpy
    smo = smo_numpy
    shapley_accumulate = shapley_accumulate_numpy
