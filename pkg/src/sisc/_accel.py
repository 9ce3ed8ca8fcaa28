"""Hot inner-loop kernels, compiled with numba when available.

Every kernel exists twice: a loop version that numba compiles and a
vectorized numpy version used when numba is missing or disabled. Set the
environment variable ``SISC_NO_NUMBA=1`` before import to force the numpy
path. Both versions are importable directly (``*_numba`` / ``*_numpy``) so
tests and the benchmark script can compare them.

Conventions shared by all kernels:

* bases have shape ``(n, F, q)``
* a lag table ``lags`` has shape ``(n, n, 2q - 1)``; entry ``lags[j, k, d + q - 1]``
  is the inner product of basis ``j`` placed at shift ``t`` with basis ``k``
  placed at shift ``t + d``
* an active set is given as two int64 arrays ``jj`` (basis) and ``tt`` (shift)
"""

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("SISC_NO_NUMBA", "").lower() not in (
    "1",
    "true",
    "yes",
)


def _jit(fn):
    if HAVE_NUMBA:
        return njit(cache=True, nogil=True)(fn)
    return fn


# --------------------------------------------------------------------------
# direct 1-D convolution
# --------------------------------------------------------------------------


def _direct_conv_loop(f, g):
    pf = f.shape[0]
    qg = g.shape[0]
    out = np.zeros(pf + qg - 1)
    for i in range(pf):
        fi = f[i]
        if fi == 0.0:
            continue
        for k in range(qg):
            out[i + k] += fi * g[k]
    return out


def direct_conv_numpy(f, g):
    return np.convolve(f, g)


direct_conv_numba = _jit(_direct_conv_loop)


# --------------------------------------------------------------------------
# Gram matrix of shifted atoms
# --------------------------------------------------------------------------


def _gram_loop(lags, jj, tt, q):
    z = jj.shape[0]
    out = np.zeros((z, z))
    for a in range(z):
        ja = jj[a]
        ta = tt[a]
        for b in range(a, z):
            d = tt[b] - ta
            if -q < d < q:
                v = lags[ja, jj[b], d + q - 1]
                out[a, b] = v
                out[b, a] = v
    return out


def gram_numpy(lags, jj, tt, q):
    d = tt[None, :] - tt[:, None]
    near = np.abs(d) < q
    idx = np.clip(d + q - 1, 0, 2 * q - 2)
    g = lags[jj[:, None], jj[None, :], idx]
    return np.where(near, g, 0.0)


gram_numba = _jit(_gram_loop)


# --------------------------------------------------------------------------
# correlation of a signal with selected shifted atoms
# --------------------------------------------------------------------------


def _correlate_at_loop(x, bases, jj, tt):
    z = jj.shape[0]
    nf = bases.shape[1]
    q = bases.shape[2]
    out = np.zeros(z)
    for a in range(z):
        j = jj[a]
        t = tt[a]
        acc = 0.0
        for f in range(nf):
            for k in range(q):
                acc += bases[j, f, k] * x[f, t + k]
        out[a] = acc
    return out


def correlate_at_numpy(x, bases, jj, tt):
    q = bases.shape[2]
    # windows: (F, T, q) view of x
    win = np.lib.stride_tricks.sliding_window_view(x, q, axis=1)
    return np.einsum("zfk,fzk->z", bases[jj], win[:, tt, :])


correlate_at_numba = _jit(_correlate_at_loop)


# --------------------------------------------------------------------------
# sparse synthesis: out += sum_a vals[a] * (basis jj[a] shifted by tt[a])
# --------------------------------------------------------------------------


def _add_atoms_loop(out, bases, jj, tt, vals):
    nf = bases.shape[1]
    q = bases.shape[2]
    for a in range(jj.shape[0]):
        v = vals[a]
        if v == 0.0:
            continue
        j = jj[a]
        t = tt[a]
        for f in range(nf):
            for k in range(q):
                out[f, t + k] += v * bases[j, f, k]
    return out


def add_atoms_numpy(out, bases, jj, tt, vals):
    q = bases.shape[2]
    contrib = vals[:, None, None] * bases[jj]  # (Z, F, q)
    cols = tt[:, None] + np.arange(q)[None, :]  # (Z, q)
    for f in range(out.shape[0]):
        np.add.at(out[f], cols.ravel(), contrib[:, f, :].ravel())
    return out


add_atoms_numba = _jit(_add_atoms_loop)


# --------------------------------------------------------------------------
# matching-pursuit correlation update after removing one atom
# --------------------------------------------------------------------------


def _mp_update_loop(corr, lags, j0, t0, v, q):
    n = corr.shape[0]
    tmax = corr.shape[1]
    lo = max(0, t0 - q + 1)
    hi = min(tmax, t0 + q)
    for j in range(n):
        for t in range(lo, hi):
            corr[j, t] -= v * lags[j, j0, t0 - t + q - 1]
    return corr


def mp_update_numpy(corr, lags, j0, t0, v, q):
    tmax = corr.shape[1]
    lo = max(0, t0 - q + 1)
    hi = min(tmax, t0 + q)
    t = np.arange(lo, hi)
    corr[:, lo:hi] -= v * lags[:, j0, t0 - t + q - 1]
    return corr


mp_update_numba = _jit(_mp_update_loop)


# --------------------------------------------------------------------------
# incremental Cholesky factor of an active-set Gram matrix
#
# ``L`` is a square buffer whose leading ``m x m`` block is lower triangular
# with ``L L^T = G[act, act]``.
# --------------------------------------------------------------------------


def _chol_append_loop(L, m, gcol, gdiag, rtol):
    w = np.empty(m)
    for i in range(m):
        acc = gcol[i]
        for k in range(i):
            acc -= L[i, k] * w[k]
        w[i] = acc / L[i, i]
    d2 = gdiag
    for i in range(m):
        d2 -= w[i] * w[i]
    if d2 <= rtol * gdiag:
        return False
    for i in range(m):
        L[m, i] = w[i]
        L[i, m] = 0.0
    L[m, m] = np.sqrt(d2)
    return True


def chol_append_numpy(L, m, gcol, gdiag, rtol):
    from scipy.linalg import solve_triangular

    w = solve_triangular(L[:m, :m], gcol, lower=True, check_finite=False) if m else np.zeros(0)
    d2 = gdiag - w @ w
    if d2 <= rtol * gdiag:
        return False
    L[m, :m] = w
    L[:m, m] = 0.0
    L[m, m] = np.sqrt(d2)
    return True


chol_append_numba = _jit(_chol_append_loop)


def _chol_delete_loop(L, m, k):
    for i in range(k, m - 1):
        for c in range(m):
            L[i, c] = L[i + 1, c]
    for i in range(k, m - 1):
        a = L[i, i]
        b = L[i, i + 1]
        r = np.sqrt(a * a + b * b)
        cs = a / r
        sn = b / r
        for row in range(i, m - 1):
            x = L[row, i]
            y = L[row, i + 1]
            L[row, i] = cs * x + sn * y
            L[row, i + 1] = -sn * x + cs * y
        L[i, i + 1] = 0.0
    for c in range(m):
        L[m - 1, c] = 0.0
        L[c, m - 1] = 0.0
    return L


def chol_delete_numpy(L, m, k):
    L[k:m - 1, :m] = L[k + 1:m, :m]
    for i in range(k, m - 1):
        a = L[i, i]
        b = L[i, i + 1]
        r = np.hypot(a, b)
        cs, sn = a / r, b / r
        x = L[i:m - 1, i].copy()
        y = L[i:m - 1, i + 1].copy()
        L[i:m - 1, i] = cs * x + sn * y
        L[i:m - 1, i + 1] = -sn * x + cs * y
        L[i, i + 1] = 0.0
    L[m - 1, :m] = 0.0
    L[:m, m - 1] = 0.0
    return L


chol_delete_numba = _jit(_chol_delete_loop)


def _chol_solve_loop(L, m, rhs):
    y = np.empty(m)
    for i in range(m):
        acc = rhs[i]
        for k in range(i):
            acc -= L[i, k] * y[k]
        y[i] = acc / L[i, i]
    # L^T x = y, walking rows of L so memory access stays contiguous
    for i in range(m - 1, -1, -1):
        xi = y[i] / L[i, i]
        y[i] = xi
        for k in range(i):
            y[k] -= xi * L[i, k]
    return y


def chol_solve_numpy(L, m, rhs):
    from scipy.linalg import solve_triangular

    Lm = L[:m, :m]
    y = solve_triangular(Lm, rhs, lower=True, check_finite=False)
    return solve_triangular(Lm.T, y, lower=False, check_finite=False)


chol_solve_numba = _jit(_chol_solve_loop)


if USE_NUMBA:
    direct_conv = direct_conv_numba
    gram = gram_numba
    correlate_at = correlate_at_numba
    add_atoms = add_atoms_numba
    mp_update = mp_update_numba
    chol_append = chol_append_numba
    chol_delete = chol_delete_numba
    chol_solve = chol_solve_numba
else:
    direct_conv = direct_conv_numpy
    gram = gram_numpy
    correlate_at = correlate_at_numpy
    add_atoms = add_atoms_numpy
    mp_update = mp_update_numpy
    chol_append = chol_append_numpy
    chol_delete = chol_delete_numpy
    chol_solve = chol_solve_numpy


def backend():
    """Name of the kernel backend selected at import time."""
    return "numba" if USE_NUMBA else "numpy"
