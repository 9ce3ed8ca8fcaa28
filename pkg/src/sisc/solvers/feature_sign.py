"""Exact L1-regularized convolutional coefficient solvers based on feature-sign search.

``fs_exact`` repeatedly grows a working set with the zero coefficients whose
squared-error partial derivatives exceed ``beta`` and solves the L1 problem
restricted to that set exactly with feature-sign search. ``fs_window`` applies
``fs_exact`` to overlapping blocks of ``2q`` shifts for long signals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .. import _accel
from ..errors import InvalidArgument
from ..model import ConvOperator, SparseCoeffs, as_bases, kkt_from_gradient
from ..signal import as_samples
from .trace import SolverTrace

log = logging.getLogger(__name__)

RIDGE = 1e-10
# a new pivot smaller than this fraction of its Gram diagonal marks the set as near singular
PIVOT_RTOL = 1e-12


@dataclass(frozen=True)
class FsConfig:
    k: int = 300
    kkt_tol: float = 1e-6
    max_iters: int = 10_000

    def __post_init__(self):
        if self.k < 1:
            raise InvalidArgument("k must be >= 1")
        if not self.kkt_tol > 0:
            raise InvalidArgument("kkt_tol must be positive")


@dataclass
class ActiveSet:
    """Ordered working set of (basis, shift) members with their sign guesses."""

    members: list = field(default_factory=list)
    signs: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.members)) != len(self.members):
            raise InvalidArgument("active set members must be distinct")
        if set(self.signs) != set(self.members):
            raise InvalidArgument("signs must be defined exactly on members")

    def arrays(self):
        jj = np.array([m[0] for m in self.members], dtype=np.int64)
        tt = np.array([m[1] for m in self.members], dtype=np.int64)
        th = np.array([self.signs[m] for m in self.members], dtype=np.float64)
        return jj, tt, th


@dataclass
class QpStep:
    values: np.ndarray
    objective: float
    active: ActiveSet
    singular: bool


# --------------------------------------------------------------------------
# restricted problem:  min_v  v'Gv - 2 b'v + beta |v|_1
# --------------------------------------------------------------------------


def _restricted_obj(G, b, beta, v):
    return float(v @ (G @ v) - 2.0 * (b @ v) + beta * np.abs(v).sum())


def _signed_qp(G, rhs):
    """Solve ``G v = rhs`` for symmetric PSD ``G``; ridge-regularize if (near) singular."""
    if G.shape[0] == 0:
        return np.zeros(0), False
    try:
        c, low = scipy.linalg.cho_factor(G, lower=True, check_finite=False)
        d = np.abs(np.diag(c))
        if d.min() ** 2 > 1e-14 * d.max() ** 2:
            return scipy.linalg.cho_solve((c, low), rhs, check_finite=False), False
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        pass
    scale = max(1.0, float(np.mean(np.diag(G))))
    Gr = G + RIDGE * scale * np.eye(G.shape[0])
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(Gr, lower=True, check_finite=False),
                                      rhs, check_finite=False), True
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return np.linalg.lstsq(Gr, rhs, rcond=None)[0], True


def _line_search(G, b, beta, v, vnew, Gv=None):
    """Best point on the segment ``v -> vnew`` among ``vnew`` and all sign crossings.

    Returns the point and its restricted objective. ``Gv`` may pass a
    precomputed ``G @ v``.
    """
    d = vnew - v
    if Gv is None:
        Gv = G @ v
    Gd = G @ d
    c0 = v @ Gv - 2.0 * (b @ v)
    c1 = 2.0 * (d @ Gv) - 2.0 * (b @ d)
    c2 = d @ Gd
    cross = (v != 0) & (np.sign(vnew) != np.sign(v))
    idx = np.nonzero(cross)[0]
    alphas = np.concatenate([[1.0], v[idx] / (v[idx] - vnew[idx])])
    alphas = np.clip(alphas, 0.0, 1.0)
    pts = v[None, :] + alphas[:, None] * d[None, :]
    who = np.concatenate([[-1], idx])
    for r in range(1, len(alphas)):
        pts[r, who[r]] = 0.0
    fvals = c0 + c1 * alphas + c2 * alphas ** 2 + beta * np.abs(pts).sum(axis=1)
    best = int(np.argmin(fvals))
    point = pts[best]
    if best > 0:
        # every coordinate crossing at the same step length lands on zero
        same = idx[np.abs(alphas[1:] - alphas[best]) <= 1e-14]
        point[same] = 0.0
    return point, float(fvals[best])


class _ActiveFactor:
    """Cholesky factor of ``G[act, act]`` kept up to date as ``act`` changes.

    Members are appended at the end and removed with Givens rotations, so a
    change of one member costs O(m^2) rather than a fresh O(m^3) factorization.
    When an append would make the factor near singular the object switches to
    dense ridge-regularized solves until the set is well conditioned again.
    """

    def __init__(self, G):
        self.G = G
        self.L = np.zeros((G.shape[0], G.shape[0]))
        self.act: list[int] = []
        self.ok = True

    def _rebuild(self):
        act = self.act
        m = len(act)
        self.L[:m, :m] = 0.0
        self.ok = False
        if m == 0:
            self.ok = True
            return
        GA = self.G[np.ix_(act, act)]
        try:
            c = scipy.linalg.cholesky(GA, lower=True, check_finite=False)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            return
        if np.all(np.diag(c) ** 2 > PIVOT_RTOL * np.diag(GA)):
            self.L[:m, :m] = c
            self.ok = True

    def sync(self, target):
        target = np.asarray(target, dtype=np.int64)
        act = np.asarray(self.act, dtype=np.int64)
        drop = np.nonzero(~np.isin(act, target))[0]
        add = target[~np.isin(target, act)]
        if not self.act:
            self.act = [int(i) for i in target]
            self._rebuild()
            return
        if self.ok:
            m = len(self.act)
            for pos in drop[::-1]:
                _accel.chol_delete(self.L, m, int(pos))
                m -= 1
        self.act = [int(i) for i in np.delete(act, drop)]
        for i in add:
            i = int(i)
            if self.ok:
                m = len(self.act)
                self.ok = _accel.chol_append(self.L, m, self.G[self.act, i], self.G[i, i], PIVOT_RTOL)
            self.act.append(i)
        if not self.ok:
            self._rebuild()

    def solve(self, rhs):
        """Solve ``G[act, act] v = rhs[act]``; returns ``(v in act order, singular)``."""
        act = self.act
        if self.ok:
            return _accel.chol_solve(self.L, len(act), rhs[act]), False
        return _signed_qp(self.G[np.ix_(act, act)], rhs[act])


def feature_sign_restricted(G, b, beta, v0, theta0, tol, max_iter=None):
    """Feature-sign search on a small dense L1 problem.

    Returns ``(v, ok, singular)``; ``ok`` is False if the iteration cap was hit
    or a step failed to decrease the objective.
    """
    z = b.size
    v = np.array(v0, dtype=np.float64)
    theta = np.array(theta0, dtype=np.float64)
    theta[v != 0] = np.sign(v[v != 0])
    max_iter = max_iter or (50 * z + 100)
    singular = False
    Gv = G @ v
    fcur = float(v @ Gv - 2.0 * (b @ v) + beta * np.abs(v).sum())
    g = 2.0 * (Gv - b)
    factor = _ActiveFactor(G)
    for _ in range(max_iter):
        active = np.nonzero(theta)[0]
        zero = np.nonzero(theta == 0)[0]
        if active.size:
            nz_viol = np.max(np.abs(g[active] + beta * theta[active]))
        else:
            nz_viol = 0.0
        if nz_viol <= tol:
            if zero.size == 0:
                return v, True, singular
            i = zero[np.argmax(np.abs(g[zero]))]
            if abs(g[i]) <= beta + tol:
                return v, True, singular
            theta[i] = -np.sign(g[i])
            active = np.nonzero(theta)[0]
        factor.sync(active)
        vnew_a, sing = factor.solve(b - 0.5 * beta * theta)
        singular |= sing
        vnew = np.zeros(z)
        vnew[factor.act] = vnew_a
        point, fnew = _line_search(G, b, beta, v, vnew, Gv)
        if not fnew < fcur:
            # zero coordinates whose QP value contradicts their sign guess block
            # the segment at its start; drop their guesses and re-solve
            wrong = (v == 0) & (theta != 0) & (np.sign(vnew) != theta)
            if wrong.any() and wrong.sum() < np.count_nonzero(theta):
                theta[wrong] = 0.0
                continue
        if fnew > fcur + 1e-13 * max(1.0, abs(fcur)):
            return v, False, singular
        if fnew >= fcur and np.array_equal(point, v):
            return v, False, singular
        v = point
        theta = np.sign(v)
        Gv = G @ v
        # exact value at the (possibly zero-snapped) point
        fcur = float(v @ Gv - 2.0 * (b @ v) + beta * np.abs(v).sum())
        g = 2.0 * (Gv - b)
    return v, False, singular


def fs_active_qp(x, bases, active: ActiveSet, beta: float, current=None) -> QpStep:
    """One feature-sign step on ``active``: signed QP solve followed by the sign-crossing line search."""
    data = as_samples(x)
    op = ConvOperator(bases, data.shape[1])
    if not active.members:
        raise InvalidArgument("active set must be nonempty")
    jj, tt, th = active.arrays()
    G = op.gram(jj, tt)
    b = op.correlate_at(data, jj, tt)
    v = np.zeros(len(jj)) if current is None else np.asarray(current, dtype=np.float64)
    vnew, singular = _signed_qp(G, b - 0.5 * beta * th)
    point, _ = _line_search(G, b, beta, v, vnew)
    keep = [m for m, val in zip(active.members, point) if val != 0]
    new_active = ActiveSet(keep, {m: float(np.sign(val)) for m, val in zip(active.members, point) if val != 0})
    obj = float(np.sum(data * data)) + _restricted_obj(G, b, beta, point)
    return QpStep(point, obj, new_active, singular)


# --------------------------------------------------------------------------
# FS-EXACT
# --------------------------------------------------------------------------


def _solve_dense(x, op: ConvOperator, beta, cfg: FsConfig, s0, trace=None):
    """Core of :func:`fs_exact` on dense arrays; returns ``(s, converged, outer_iters)``."""
    n, T = op.n, op.T
    s = np.array(s0, dtype=np.float64) if s0 is not None else np.zeros((n, T))
    r = x - op.apply(s)
    g = -2.0 * op.adjoint(r)
    f_cur = float(np.sum(r * r) + beta * np.abs(s).sum())
    if trace is not None:
        trace.record(f_cur)
    inner_tol = 0.1 * cfg.kkt_tol

    def evaluate(S, v):
        s_new = np.zeros(n * T)
        s_new[S] = v
        s_new = s_new.reshape(n, T)
        r_new = x - op.apply(s_new)
        return s_new, r_new, float(np.sum(r_new * r_new) + beta * np.abs(v).sum())

    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        kkt_cur = kkt_from_gradient(g, s, beta)
        if kkt_cur <= cfg.kkt_tol:
            converged = True
            break
        flat_s = s.ravel()
        absg = np.abs(g).ravel()
        nz = np.nonzero(flat_s)[0]
        viol = np.nonzero((flat_s == 0) & (absg > beta))[0]
        order = np.argsort(-absg[viol], kind="stable")
        # more simultaneous activations than free signal dimensions cannot give a regular QP
        k = min(cfg.k, max(1, (x.size - nz.size) // 2))
        cand = viol[order[:k]]
        S = np.union1d(nz, cand)
        jj, tt = np.divmod(S, T)
        G = op.gram(jj, tt)
        b = op.correlate_at(x, jj, tt)
        v0 = flat_s[S]
        is_new = np.isin(S, cand)
        new_sign = -np.sign(g.ravel()[S])
        # acceptance uses the true residual: the restricted quadratic loses all
        # precision when the active Gram matrix is nearly singular
        slack = 4.0 * np.finfo(float).eps * max(1.0, f_cur) * np.sqrt(x.size)
        theta0 = np.where(is_new, new_sign, np.sign(v0))
        v, _, _ = feature_sign_restricted(G, b, beta, v0, theta0, inner_tol)
        s_new, r_new, f_new = evaluate(S, v)
        if not f_new < f_cur - slack and cand.size > 1:
            # batch step gave no descent: seed only the strongest candidate
            log.debug("batch activation of %d gave no descent; falling back", cand.size)
            theta0 = np.sign(v0)
            top = np.searchsorted(S, cand[0])
            theta0[top] = new_sign[top]
            v, _, _ = feature_sign_restricted(G, b, beta, v0, theta0, inner_tol)
            s_new, r_new, f_new = evaluate(S, v)
        if f_new > f_cur + slack:
            break
        g_new = -2.0 * op.adjoint(r_new)
        descended = f_new < f_cur - slack
        # near the optimum the decrease can drop below rounding while the
        # active-set solve still sharpens stationarity; keep such steps
        if not descended and not kkt_from_gradient(g_new, s_new, beta) < kkt_cur:
            break
        s, r, g = s_new, r_new, g_new
        if trace is not None and f_new < f_cur:
            trace.record(f_new)
        f_cur = min(f_cur, f_new)
    else:
        converged = kkt_from_gradient(g, s, beta) <= cfg.kkt_tol
    return s, converged, it


def fs_exact(x, bases, beta: float, cfg: FsConfig | None = None, warm=None,
             trace: SolverTrace | None = None) -> SparseCoeffs:
    """Exact minimizer of the single-input L1 coefficient problem.

    Parameters
    ----------
    x : Signal or array, shape (F, p)
    bases : BasisSet or array, shape (n, F, q)
    beta : float
        Sparsity penalty.
    cfg : FsConfig
        Batch activation count ``k``, KKT tolerance and iteration cap.
    warm : SparseCoeffs or dense array, optional
        Starting point; any values are accepted.
    trace : SolverTrace, optional
        Receives the objective after every outer iteration.

    Returns
    -------
    SparseCoeffs
        ``converged`` is False when the iteration cap was reached first.
    """
    cfg = cfg or FsConfig()
    if not beta > 0:
        raise InvalidArgument("beta must be positive")
    data = as_samples(x)
    a = as_bases(bases)
    if a.shape[1] != data.shape[0]:
        raise InvalidArgument("input and basis channel counts differ")
    op = ConvOperator(a, data.shape[1])
    s0 = None
    if warm is not None:
        s0 = warm.dense() if isinstance(warm, SparseCoeffs) else np.asarray(warm, dtype=np.float64)
        if s0.shape != (op.n, op.T):
            raise InvalidArgument("warm start has wrong dims")
    s, converged, _ = _solve_dense(data, op, beta, cfg, s0, trace)
    if trace is not None:
        trace.converged = converged
    return SparseCoeffs.from_dense(s, converged)


# --------------------------------------------------------------------------
# FS-WINDOW
# --------------------------------------------------------------------------


def window_starts(T: int, q: int) -> list[int]:
    """Start shifts of the ``2q``-wide windows (stride ``q``); the last one ends at ``T``."""
    width = 2 * q
    if T <= width:
        return [0]
    starts = list(range(0, T - width + 1, q))
    if starts[-1] + width < T:
        starts.append(T - width)
    return starts


def fs_window(x, bases, beta: float, numpasses: int | None = 2, cfg: FsConfig | None = None,
              warm=None) -> SparseCoeffs:
    """Sliding-window block-coordinate descent with an exact solve per window.

    ``numpasses=None`` iterates until the whole problem meets ``cfg.kkt_tol``.
    Signals with at most ``2q`` shifts are solved directly by :func:`fs_exact`.
    """
    cfg = cfg or FsConfig()
    data = as_samples(x)
    a = as_bases(bases)
    op = ConvOperator(a, data.shape[1])
    n, q, T = op.n, op.q, op.T
    if T <= 2 * q:
        return fs_exact(data, a, beta, cfg, warm)
    s = np.zeros((n, T)) if warm is None else (
        warm.dense() if isinstance(warm, SparseCoeffs) else np.array(warm, dtype=np.float64))
    width = 2 * q
    seg_len = width + q - 1
    seg_op = ConvOperator(a, seg_len)
    # local stationarity is measured on a slice, so leave headroom for the global check
    seg_cfg = replace(cfg, kkt_tol=0.1 * cfg.kkt_tol)
    r = data - op.apply(s)
    starts = window_starts(T, q)
    max_passes = numpasses if numpasses is not None else 1000
    converged = False
    for _ in range(max_passes):
        for t0 in starts:
            sw = s[:, t0:t0 + width]
            local = r[:, t0:t0 + seg_len] + seg_op.apply(sw)
            sw_new, _, _ = _solve_dense(local, seg_op, beta, seg_cfg, sw)
            s[:, t0:t0 + width] = sw_new
            r[:, t0:t0 + seg_len] = local - seg_op.apply(sw_new)
        if numpasses is None:
            r = data - op.apply(s)
            g = -2.0 * op.adjoint(r)
            if kkt_from_gradient(g, s, beta) <= cfg.kkt_tol:
                converged = True
                break
    if numpasses is not None:
        g = coeff_grad_dense(data, op, s)
        converged = kkt_from_gradient(g, s, beta) <= cfg.kkt_tol
    return SparseCoeffs.from_dense(s, converged)


def coeff_grad_dense(x, op: ConvOperator, s) -> np.ndarray:
    return -2.0 * op.adjoint(x - op.apply(s))
