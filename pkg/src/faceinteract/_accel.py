"""Hot numeric kernels: pairwise squared distances, SMO, kernel expansions.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version with the same arithmetic. Set ``FACEINTERACT_NO_NUMBA=1`` (or run
without numba installed) to route the public dispatchers to numpy.

Both paths reduce in a fixed order so results never depend on thread count.
"""

import os

import numpy as np

_TAU = 1e-12

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def _flag_disabled():
    return os.environ.get("FACEINTERACT_NO_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAS_NUMBA and not _flag_disabled()


# ---------------------------------------------------------------------------
# squared Euclidean distances


@njit(cache=True, nogil=True)
def sqdist_numba(X, Z):
    n, d = X.shape
    m = Z.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                t = X[i, k] - Z[j, k]
                s += t * t
            out[i, j] = s
    return out


def sqdist_numpy(X, Z, chunk=64):
    n = X.shape[0]
    out = np.empty((n, Z.shape[0]))
    for start in range(0, n, chunk):
        diff = X[start:start + chunk, None, :] - Z[None, :, :]
        out[start:start + chunk] = np.add.reduce(diff * diff, axis=2)
    return out


@njit(cache=True, nogil=True)
def dot_numba(X, Z):
    n, d = X.shape
    m = Z.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                s += X[i, k] * Z[j, k]
            out[i, j] = s
    return out


def dot_numpy(X, Z, chunk=64):
    # explicit reduction instead of BLAS gemm: BLAS results can vary with threads
    n = X.shape[0]
    out = np.empty((n, Z.shape[0]))
    for start in range(0, n, chunk):
        out[start:start + chunk] = np.add.reduce(X[start:start + chunk, None, :] * Z[None, :, :], axis=2)
    return out


# ---------------------------------------------------------------------------
# SMO for the C-SVC dual, maximal-violating-pair working set selection
#
# minimises f(a) = 0.5 a'Qa - e'a, Q_ij = y_i y_j K_ij, 0 <= a <= C, y'a = 0
# G holds grad f = Qa - e; the dual objective reported is -f.


@njit(cache=True, nogil=True)
def smo_numba(K, y, C, tol, max_iter, rank):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    history = np.empty(min(max_iter, 1023) + 1)
    history[0] = 0.0
    it = 0
    converged = False
    while True:
        gmax = -np.inf
        gmin = np.inf
        i = -1
        j = -1
        for t in range(n):
            v = -y[t] * G[t]
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                if v > gmax or (v == gmax and rank[t] < rank[i]):
                    gmax = v
                    i = t
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                if v < gmin or (v == gmin and rank[t] < rank[j]):
                    gmin = v
                    j = t
        if i < 0 or j < 0 or gmax - gmin < tol:
            converged = True
            break
        if it >= max_iter:
            break

        yi = y[i]
        yj = y[j]
        qij = yi * yj * K[i, j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        if yi != yj:
            quad = K[i, i] + K[j, j] + 2.0 * qij
            if quad <= 0.0:
                quad = _TAU
            delta = (-G[i] - G[j]) / quad
            diff = ai_old - aj_old
            ai = ai_old + delta
            aj = aj_old + delta
            if diff > 0.0:
                if aj < 0.0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0.0:
                    ai = 0.0
                    aj = -diff
            if diff > 0.0:
                if ai > C:
                    ai = C
                    aj = C - diff
            else:
                if aj > C:
                    aj = C
                    ai = C + diff
        else:
            quad = K[i, i] + K[j, j] - 2.0 * qij
            if quad <= 0.0:
                quad = _TAU
            delta = (G[i] - G[j]) / quad
            total = ai_old + aj_old
            ai = ai_old - delta
            aj = aj_old + delta
            if total > C:
                if ai > C:
                    ai = C
                    aj = total - C
            else:
                if aj < 0.0:
                    aj = 0.0
                    ai = total
            if total > C:
                if aj > C:
                    aj = C
                    ai = total - C
            else:
                if ai < 0.0:
                    ai = 0.0
                    aj = total
        alpha[i] = ai
        alpha[j] = aj
        dai = ai - ai_old
        daj = aj - aj_old
        f = 0.0
        for t in range(n):
            G[t] += y[t] * (yi * K[i, t] * dai + yj * K[j, t] * daj)
            f += alpha[t] * (G[t] - 1.0)
        it += 1
        if it >= history.shape[0]:
            grown = np.empty(2 * history.shape[0])
            grown[: history.shape[0]] = history
            history = grown
        history[it] = -0.5 * f
    return alpha, G, history[: it + 1], it, converged


def _argbest(values, mask, rank, largest):
    if not mask.any():
        return -1, 0.0
    v = np.where(mask, values, -np.inf if largest else np.inf)
    best = v.max() if largest else v.min()
    tied = np.flatnonzero(mask & (v == best))
    return int(tied[np.argmin(rank[tied])]), best


def smo_numpy(K, y, C, tol, max_iter, rank):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    history = [0.0]
    it = 0
    converged = False
    pos = y > 0
    while True:
        v = -y * G
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (pos & (alpha > 0)) | (~pos & (alpha < C))
        i, gmax = _argbest(v, up, rank, True)
        j, gmin = _argbest(v, low, rank, False)
        if i < 0 or j < 0 or gmax - gmin < tol:
            converged = True
            break
        if it >= max_iter:
            break

        yi, yj = y[i], y[j]
        qij = yi * yj * K[i, j]
        ai_old, aj_old = alpha[i], alpha[j]
        if yi != yj:
            quad = K[i, i] + K[j, j] + 2.0 * qij
            if quad <= 0.0:
                quad = _TAU
            delta = (-G[i] - G[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0.0:
                if aj < 0.0:
                    aj, ai = 0.0, diff
            elif ai < 0.0:
                ai, aj = 0.0, -diff
            if diff > 0.0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            quad = K[i, i] + K[j, j] - 2.0 * qij
            if quad <= 0.0:
                quad = _TAU
            delta = (G[i] - G[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0.0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0.0:
                ai, aj = 0.0, total
        alpha[i] = ai
        alpha[j] = aj
        G += y * (yi * K[i] * (ai - ai_old) + yj * K[j] * (aj - aj_old))
        it += 1
        history.append(-0.5 * float(np.add.reduce(alpha * (G - 1.0))))
    return alpha, G, np.asarray(history), it, converged


# ---------------------------------------------------------------------------
# kernel expansion sum_i coef_i k(x_i, z) with a sequential, fixed-order sum


@njit(cache=True, nogil=True)
def expand_numba(Kxz, coef):
    m, n = Kxz.shape
    out = np.empty(m)
    for r in range(m):
        s = 0.0
        for c in range(n):
            s += Kxz[r, c] * coef[c]
        out[r] = s
    return out


def expand_numpy(Kxz, coef):
    return np.add.reduce(Kxz * coef[None, :], axis=1)


# ---------------------------------------------------------------------------
# dispatchers


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def sqdist(X, Z):
    X, Z = _f64(X), _f64(Z)
    return sqdist_numba(X, Z) if USE_NUMBA else sqdist_numpy(X, Z)


def dot(X, Z):
    X, Z = _f64(X), _f64(Z)
    return dot_numba(X, Z) if USE_NUMBA else dot_numpy(X, Z)


def smo(K, y, C, tol, max_iter, rank):
    """Run SMO on a precomputed kernel matrix.

    Returns ``(alpha, grad, objective_history, n_iter, converged)``.
    """
    K, y = _f64(K), _f64(y)
    rank = np.ascontiguousarray(rank, dtype=np.int64)
    fn = smo_numba if USE_NUMBA else smo_numpy
    return fn(K, y, float(C), float(tol), int(max_iter), rank)


def expand(Kxz, coef):
    Kxz, coef = _f64(Kxz), _f64(coef)
    return expand_numba(Kxz, coef) if USE_NUMBA else expand_numpy(Kxz, coef)
