"""Hot loops: the p-variation dynamic programme and pairwise empirical norms.

Every kernel exists twice, once as plain numpy and once compiled with
numba.  Setting ``ROUGHBSDE_DISABLE_NUMBA=1`` before import selects the
numpy versions; otherwise numba is used when importable.
"""

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("ROUGHBSDE_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


# ----------------------------------------------------------------- numpy

def pvar_dp_numpy(powered):
    """Best partition sum of ``powered[i, j]`` over chains 0 = i0 < ... < ik = n-1."""
    n = powered.shape[0]
    best = np.zeros(n)
    for j in range(1, n):
        best[j] = np.max(best[:j] + powered[:j, j])
    return best[n - 1]


def pvar_dp_from_right_numpy(powered):
    """best[i] = best partition sum on the window [i, n-1]; used for window building."""
    n = powered.shape[0]
    best = np.zeros(n)
    for i in range(n - 2, -1, -1):
        best[i] = np.max(powered[i, i + 1:] + best[i + 1:])
    return best


def pairwise_lm_numpy(values, m):
    """(n, n) matrix of (mean_s |V[s, j] - V[s, i]|^m)^(1/m) for i < j; ``m=inf`` gives max."""
    S, n, D = values.shape
    out = np.zeros((n, n))
    for i in range(n - 1):
        diff = values[:, i + 1:, :] - values[:, i:i + 1, :]
        mag = np.sqrt(np.sum(diff * diff, axis=2))
        if np.isinf(m):
            out[i, i + 1:] = mag.max(axis=0)
        else:
            out[i, i + 1:] = np.mean(mag ** m, axis=0) ** (1.0 / m)
    return out


def pairwise_remainder_numpy(values, deriv, path, m):
    """Empirical L^m norm of V_j - V_i - V'_i (X_j - X_i) over pairs i < j.

    values (S, n, D), deriv (S, n, D, e), path (B, n, e) with B in {1, S}.
    """
    S, n, D = values.shape
    out = np.zeros((n, n))
    for i in range(n - 1):
        dx = path[:, i + 1:, :] - path[:, i:i + 1, :]
        pred = np.einsum("sde,sje->sjd", deriv[:, i], np.broadcast_to(dx, (S,) + dx.shape[1:]))
        rem = values[:, i + 1:, :] - values[:, i:i + 1, :] - pred
        mag = np.sqrt(np.sum(rem * rem, axis=2))
        if np.isinf(m):
            out[i, i + 1:] = mag.max(axis=0)
        else:
            out[i, i + 1:] = np.mean(mag ** m, axis=0) ** (1.0 / m)
    return out


# ----------------------------------------------------------------- numba

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def pvar_dp_numba(powered):
        n = powered.shape[0]
        best = np.zeros(n)
        for j in range(1, n):
            top = -1.0
            for i in range(j):
                cand = best[i] + powered[i, j]
                if cand > top:
                    top = cand
            best[j] = top
        return best[n - 1]

    @numba.njit(cache=True)
    def pvar_dp_from_right_numba(powered):
        n = powered.shape[0]
        best = np.zeros(n)
        for i in range(n - 2, -1, -1):
            top = -1.0
            for j in range(i + 1, n):
                cand = powered[i, j] + best[j]
                if cand > top:
                    top = cand
            best[i] = top
        return best

    @numba.njit(cache=True)
    def _accumulate(sq, acc, half_m, mode):
        # mode 0: sum of squares (m = 2), 1: sum of |.|^m, 2: running max of |.|
        if mode == 0:
            return acc + sq
        if mode == 1:
            return acc + sq ** half_m
        mag = np.sqrt(sq)
        return mag if mag > acc else acc

    @numba.njit(cache=True)
    def _finish(acc, S, m, mode):
        if mode == 2:
            return acc
        if mode == 0:
            return np.sqrt(acc / S)
        return (acc / S) ** (1.0 / m)

    @numba.njit(cache=True)
    def _pairwise_lm_numba(vt, m, mode):
        # vt is time-major, (n, S, D), so the sample loop runs over contiguous memory
        n, S, D = vt.shape
        out = np.zeros((n, n))
        half_m = 0.5 * m
        for i in range(n - 1):
            for j in range(i + 1, n):
                acc = 0.0
                for s in range(S):
                    sq = 0.0
                    for d in range(D):
                        diff = vt[j, s, d] - vt[i, s, d]
                        sq += diff * diff
                    acc = _accumulate(sq, acc, half_m, mode)
                out[i, j] = _finish(acc, S, m, mode)
        return out

    @numba.njit(cache=True)
    def _pairwise_remainder_numba(vt, dt, pt, m, mode):
        # time-major: vt (n, S, D), dt (n, S, D, e), pt (n, B, e)
        n, S, D = vt.shape
        e = dt.shape[3]
        B = pt.shape[1]
        out = np.zeros((n, n))
        half_m = 0.5 * m
        for i in range(n - 1):
            for j in range(i + 1, n):
                acc = 0.0
                for s in range(S):
                    b = s if B > 1 else 0
                    sq = 0.0
                    for d in range(D):
                        r = vt[j, s, d] - vt[i, s, d]
                        for k in range(e):
                            r -= dt[i, s, d, k] * (pt[j, b, k] - pt[i, b, k])
                        sq += r * r
                    acc = _accumulate(sq, acc, half_m, mode)
                out[i, j] = _finish(acc, S, m, mode)
        return out

    def _mode(m):
        if np.isinf(m):
            return 2.0, 2
        return float(m), 0 if m == 2 else 1

    def _time_major(a):
        return np.ascontiguousarray(np.swapaxes(np.asarray(a, dtype=np.float64), 0, 1))

    def pairwise_lm_numba(values, m):
        m, mode = _mode(m)
        return _pairwise_lm_numba(_time_major(values), m, mode)

    def pairwise_remainder_numba(values, deriv, path, m):
        m, mode = _mode(m)
        return _pairwise_remainder_numba(_time_major(values), _time_major(deriv), _time_major(path), m, mode)


def _select(name):
    if USE_NUMBA:
        return globals()[name + "_numba"]
    return globals()[name + "_numpy"]


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def pvar_dp(powered):
    return float(_select("pvar_dp")(np.ascontiguousarray(powered, dtype=np.float64)))


def pvar_dp_from_right(powered):
    return _select("pvar_dp_from_right")(np.ascontiguousarray(powered, dtype=np.float64))


def pairwise_lm(values, m):
    values = np.asarray(values, dtype=np.float64)
    return _select("pairwise_lm")(values.reshape(values.shape[0], values.shape[1], -1), m)


def pairwise_remainder(values, deriv, path, m):
    values = np.asarray(values, dtype=np.float64)
    S, n = values.shape[:2]
    e = path.shape[-1]
    return _select("pairwise_remainder")(
        values.reshape(S, n, -1), np.asarray(deriv, dtype=np.float64).reshape(S, n, -1, e), path, m
    )
