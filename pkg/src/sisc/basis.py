"""Basis updates with coefficients held fixed.

The problem is

    min_a  sum_i ||x_i - sum_j a_j * s_ij||^2   s.t.  ||a_j||^2 <= c

After an unnormalized length-``p`` DFT it splits into one small complex
least-squares problem per frequency, coupled only through the norm
constraints. Its Lagrange dual ``D(lambda)`` is concave in ``n`` variables and
is maximized with a projected damped Newton method. All dual quantities need
only the cross-spectra ``S_t^* S_t``, ``S_t^* x_t`` and ``||x_t||^2``, which are
accumulated one input at a time, so memory does not grow with the number of
inputs.

The frequency-domain problem lets every basis use all ``p`` samples. When the
recovered bases carry energy past sample ``q``, :func:`update_bases` finishes
with the dual of the problem restricted to length-``q`` bases, assembled from
the same cache (see :func:`exact_dual_eval`).
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import DomainError, FormatError, InvalidArgument, NoUpdateError, SymmetryViolation
from .model import BasisSet, ConvOperator, SparseCoeffs, as_bases, as_dense_coeffs
from .signal import as_samples

log = logging.getLogger(__name__)

SPILL_MAGIC = b"SXSP"
SPILL_VERSION = 1

# largest n*q for which the support-q dual is solved exactly
EXACT_MAX_DIM = 4096
# relative tail energy above which the frequency-domain solution is polished
TAIL_TOL = 1e-9
COND_MAX = 1e12


# --------------------------------------------------------------------------
# cross-spectra cache
# --------------------------------------------------------------------------


def half_weights(p: int) -> np.ndarray:
    """Multiplicity of each ``rfft`` bin in the full spectrum (DC and Nyquist once)."""
    w = np.full(p // 2 + 1, 2.0)
    w[0] = 1.0
    if p % 2 == 0:
        w[-1] = 1.0
    return w


@dataclass
class CrossSpectra:
    """Per-frequency sufficient statistics for the basis problem.

    Only the ``p // 2 + 1`` nonnegative frequencies are kept, and for the
    Hermitian ``S_t^* S_t`` only the lower triangle (row-major
    ``numpy.tril_indices`` order).

    Attributes
    ----------
    sts_tril : complex (H, n(n+1)/2)
    stx : complex (H, n, F)
    xnorm : real (H,)
        ``sum_i sum_f |x_hat_{i,f,t}|^2``.
    """

    p: int
    n: int
    F: int
    m: int
    q: int
    sts_tril: np.ndarray
    stx: np.ndarray
    xnorm: np.ndarray

    @property
    def H(self) -> int:
        return self.p // 2 + 1

    @property
    def nbytes(self) -> int:
        return self.sts_tril.nbytes + self.stx.nbytes + self.xnorm.nbytes

    def sts(self) -> np.ndarray:
        """Full Hermitian ``(H, n, n)`` matrices."""
        il, jl = np.tril_indices(self.n)
        out = np.zeros((self.H, self.n, self.n), dtype=np.complex128)
        out[:, il, jl] = self.sts_tril
        out[:, jl, il] = np.conj(self.sts_tril)
        return out

    def total_energy(self) -> float:
        """``sum_i ||x_i||^2`` in the time domain."""
        return float(np.dot(half_weights(self.p), self.xnorm) / self.p)

    def active_mask(self) -> np.ndarray:
        """Bases with at least one nonzero coefficient."""
        il, jl = np.tril_indices(self.n)
        diag = self.sts_tril[:, il == jl].real
        return np.any(diag > 0, axis=0)


def precompute_cross_spectra(inputs, coeffs) -> CrossSpectra:
    """Accumulate the cross-spectra cache, streaming over the inputs.

    ``inputs`` and ``coeffs`` may be any iterables (e.g. generators); only one
    input's transforms are alive at a time.
    """
    it_x = iter(inputs)
    it_s = iter(coeffs)
    cs = None
    il = jl = None
    while True:
        try:
            x = next(it_x)
        except StopIteration:
            try:
                next(it_s)
            except StopIteration:
                break
            raise InvalidArgument("more coefficient maps than inputs")
        try:
            s = next(it_s)
        except StopIteration:
            raise InvalidArgument("more inputs than coefficient maps") from None
        data = as_samples(x)
        F, p = data.shape
        if isinstance(s, SparseCoeffs):
            n, T = s.shape
        else:
            n, T = np.shape(s)
        if T > p:
            raise InvalidArgument("coefficient map longer than input")
        if cs is None:
            H = p // 2 + 1
            il, jl = np.tril_indices(n)
            cs = CrossSpectra(p, n, F, 0, p - T + 1, np.zeros((H, il.size), np.complex128),
                              np.zeros((H, n, F), np.complex128), np.zeros(H))
        elif (F, p, n, p - T + 1) != (cs.F, cs.p, cs.n, cs.q):
            raise InvalidArgument("inputs and coefficient maps must share dims")
        dense = as_dense_coeffs(s, (n, T))
        S = np.fft.rfft(dense, n=p, axis=-1).T  # (H, n)
        X = np.fft.rfft(data, n=p, axis=-1).T  # (H, F)
        Sc = np.conj(S)
        cs.sts_tril += Sc[:, il] * S[:, jl]
        cs.stx += Sc[:, :, None] * X[:, None, :]
        cs.xnorm += np.sum(np.abs(X) ** 2, axis=1)
        cs.m += 1
    if cs is None:
        raise InvalidArgument("no inputs")
    return cs


# --------------------------------------------------------------------------
# frequency-domain dual
# --------------------------------------------------------------------------


@dataclass
class DualState:
    lam: np.ndarray
    dual_value: float
    grad: np.ndarray
    hess: np.ndarray


def lambda_floor(cs: CrossSpectra) -> float:
    il, jl = np.tril_indices(cs.n)
    diag = cs.sts_tril[:, il == jl].real
    return 1e-10 * (float(diag.mean()) / max(cs.m, 1) + 1.0)


def _check_lam(lam, n):
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (n,):
        raise InvalidArgument(f"lambda must have {n} entries")
    if np.any(~(lam > 0)):
        raise DomainError("dual variables must be strictly positive")
    return lam


def _fourier_terms(sts, stx, xnorm, weights, lam, c_hat):
    M = sts + np.diag(lam)[None, :, :]
    Minv = np.linalg.inv(M)
    U = Minv @ stx  # (H, n, F)
    quad = np.einsum("hjf,hjf->h", np.conj(stx), U).real
    D = float(np.dot(weights, xnorm - quad) - c_hat * lam.sum())
    grad = np.einsum("h,hjf->j", weights, np.abs(U) ** 2) - c_hat
    UU = np.einsum("hjf,hkf->hjk", U, np.conj(U))
    hess = -2.0 * np.einsum("h,hjk->jk", weights, (UU * np.conj(Minv)).real)
    hess = 0.5 * (hess + hess.T)
    return D, grad, hess, U


def _full_spectrum(cs: CrossSpectra):
    """Mirror the cached half spectrum to all ``p`` frequencies."""
    p = cs.p
    sts_h = cs.sts()
    idx = np.arange(p)
    src = np.where(idx <= p // 2, idx, p - idx)
    conj = idx > p // 2
    sts = np.where(conj[:, None, None], np.conj(sts_h[src]), sts_h[src])
    stx = np.where(conj[:, None, None], np.conj(cs.stx[src]), cs.stx[src])
    return sts, stx, cs.xnorm[src]


def dual_eval(cs: CrossSpectra, lam, c_hat: float, half: bool = True, sts=None) -> DualState:
    """Dual value, gradient and Hessian of the frequency-domain problem.

    With ``M_t = S_t^* S_t + diag(lam)`` and ``u_t = M_t^{-1} S_t^* x_t``::

        D    = sum_t (||x_t||^2 - (S_t^* x_t)^* u_t) - c_hat * sum(lam)
        dD_i = sum_t |u_t,i|^2 - c_hat
        H    = -2 sum_t Re[(u_t u_t^*) o conj(M_t^{-1})]

    Sums run over the half spectrum with interior bins counted twice unless
    ``half`` is False, in which case the full spectrum is rebuilt and summed
    directly. Multichannel inputs sum the quadratic terms over channels.
    """
    lam = _check_lam(lam, cs.n)
    if half:
        sts = cs.sts() if sts is None else sts
        D, g, Hm, _ = _fourier_terms(sts, cs.stx, cs.xnorm, half_weights(cs.p), lam, c_hat)
    else:
        sts_f, stx_f, xn_f = _full_spectrum(cs)
        D, g, Hm, _ = _fourier_terms(sts_f, stx_f, xn_f, np.ones(cs.p), lam, c_hat)
    return DualState(lam.copy(), D, g, Hm)


# --------------------------------------------------------------------------
# projected damped Newton ascent
# --------------------------------------------------------------------------


@dataclass
class DualSolution:
    lam: np.ndarray
    converged: bool
    state: DualState
    iterations: int


def _projected_grad(g, lam, floor):
    at_floor = lam <= floor * (1 + 1e-12)
    return np.where(at_floor & (g < 0), 0.0, g)


def newton_ascent(evaluate, lam0, floor: float, tol, max_iters: int = 200) -> DualSolution:
    """Maximize a concave function of ``lam >= floor`` by projected damped Newton.

    ``evaluate(lam)`` returns a :class:`DualState`; ``tol(state)`` returns the
    per-coordinate gradient tolerance. Variables at the floor with a
    gradient pushing them down are held fixed; the Newton step on the rest is
    halved until the projected point raises the dual. An ill-conditioned
    Hessian falls back to a scaled gradient step.
    """
    lam = np.maximum(np.asarray(lam0, dtype=np.float64), floor)
    st = evaluate(lam)
    it = 0
    for it in range(1, max_iters + 1):
        pg = _projected_grad(st.grad, st.lam, floor)
        if np.all(np.abs(pg) <= tol(st)):
            return DualSolution(st.lam, True, st, it - 1)
        free = ~((st.lam <= floor * (1 + 1e-12)) & (st.grad < 0))
        step = np.zeros_like(lam)
        Hf = st.hess[np.ix_(free, free)]
        newton_ok = False
        if free.any():
            try:
                if np.linalg.cond(Hf) < COND_MAX:
                    step[free] = -np.linalg.solve(Hf, st.grad[free])
                    newton_ok = bool(np.dot(step, st.grad) > 0)
            except np.linalg.LinAlgError:
                newton_ok = False
        if not newton_ok:
            scale = np.abs(np.diag(st.hess)).max(initial=0.0)
            step = pg / scale if scale > 0 else pg
        improved = False
        t = 1.0
        pg_max = np.abs(pg).max()
        # D is a difference of large terms, so its rounding exceeds eps * |D|
        slack = 1e-12 * max(1.0, abs(st.dual_value))
        for _ in range(60):
            cand = np.maximum(st.lam + t * step, floor)
            new = evaluate(cand)
            if new.dual_value > st.dual_value:
                improved = True
                break
            # ascent below rounding of D: still take steps that sharpen stationarity
            if new.dual_value >= st.dual_value - slack and \
                    np.abs(_projected_grad(new.grad, new.lam, floor)).max() < 0.5 * pg_max:
                improved = True
                break
            t *= 0.5
        if not improved:
            # no representable ascent left: accept if the gradient is near tolerance
            ok = bool(np.all(np.abs(pg) <= 100 * tol(st)))
            return DualSolution(st.lam, ok, st, it)
        st = new
    pg = _projected_grad(st.grad, st.lam, floor)
    return DualSolution(st.lam, bool(np.all(np.abs(pg) <= tol(st))), st, it)


def _grad_tol(scale_c: float):
    def tol(st: DualState):
        return np.minimum(1e-8 * max(1.0, abs(st.dual_value)),
                          1e-9 * scale_c / np.maximum(1.0, st.lam))
    return tol


def _initial_lambda(cs: CrossSpectra, floor: float) -> np.ndarray:
    il, jl = np.tril_indices(cs.n)
    diag = cs.sts_tril[:, il == jl].real.mean(axis=0)
    return np.maximum(diag, floor)


def solve_dual(cs: CrossSpectra, c: float, lam0=None, max_iters: int = 200) -> DualSolution:
    """Maximize the frequency-domain dual for norm bound ``c`` (``c_hat = c * p``)."""
    if not c > 0:
        raise InvalidArgument("c must be positive")
    c_hat = c * cs.p
    sts = cs.sts()
    floor = lambda_floor(cs)
    lam0 = _initial_lambda(cs, floor) if lam0 is None else lam0
    return newton_ascent(lambda lam: dual_eval(cs, lam, c_hat, sts=sts), lam0, floor,
                         _grad_tol(c_hat), max_iters)


def recover_bases(cs: CrossSpectra, lam, q: int):
    """Frequency-domain minimizer ``M_t^{-1} S_t^* x_t``, back in time and cut to ``q``.

    Returns ``(bases (n, F, q), tail)`` where ``tail`` is the largest per-basis
    ratio of discarded to total norm.
    """
    lam = _check_lam(lam, cs.n)
    M = cs.sts() + np.diag(lam)[None]
    U = np.linalg.solve(M, cs.stx)  # (H, n, F)
    scale = max(np.abs(U).max(initial=0.0), 1e-300)
    edge = [0] + ([cs.H - 1] if cs.p % 2 == 0 else [])
    if np.abs(U[edge].imag).max() > 1e-8 * scale:
        raise SymmetryViolation("DC/Nyquist bins of the recovered bases are not real")
    full = np.fft.irfft(np.moveaxis(U, 0, -1), n=cs.p, axis=-1)  # (n, F, p)
    total = np.sqrt(np.sum(full ** 2, axis=(1, 2)))
    tail_norm = np.sqrt(np.sum(full[:, :, q:] ** 2, axis=(1, 2)))
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(total > 0, tail_norm / total, 0.0)
    return np.ascontiguousarray(full[:, :, :q]), float(ratio.max(initial=0.0))


# --------------------------------------------------------------------------
# exact dual for length-q bases
# --------------------------------------------------------------------------


@dataclass
class ExactSystem:
    """Time-domain normal equations ``(Q + diag(lam) x I_q) a_f = b_f`` for length-``q`` bases."""

    Q: np.ndarray  # (n q, n q)
    b: np.ndarray  # (n q, F)
    energy: float
    n: int
    q: int


def exact_system(cs: CrossSpectra, q: int) -> ExactSystem:
    """Assemble the length-``q`` normal equations from the cross-spectra cache.

    ``Q[(j, u), (k, v)] = sum_i sum_t s_ij[t] s_ik[t + u - v]`` and
    ``b[(j, u), f] = sum_i sum_t s_ij[t] x_if[t + u]``. Zero-padding to ``p``
    leaves these lags free of wraparound.
    """
    n, p = cs.n, cs.p
    R = np.fft.irfft(cs.sts(), n=p, axis=0)  # (p, n, n): R[d, j, k]
    d = (np.arange(q)[:, None] - np.arange(q)[None, :]) % p  # (q, q)
    Q = R[d]  # (q, q, n, n) indexed [u, v, j, k]
    Q = np.ascontiguousarray(Q.transpose(2, 0, 3, 1).reshape(n * q, n * q))
    Q = 0.5 * (Q + Q.T)
    bt = np.fft.irfft(cs.stx, n=p, axis=0)[:q]  # (q, n, F)
    b = np.ascontiguousarray(bt.transpose(1, 0, 2).reshape(n * q, cs.F))
    return ExactSystem(Q, b, cs.total_energy(), n, q)


def _exact_solve(sysm: ExactSystem, lam):
    K = sysm.Q + np.repeat(lam, sysm.q) * np.eye(sysm.Q.shape[0])
    cf = scipy.linalg.cho_factor(K, lower=True, check_finite=False)
    a = scipy.linalg.cho_solve(cf, sysm.b, check_finite=False)
    return cf, a


def exact_dual_eval(sysm: ExactSystem, lam, c: float, with_hess: bool = True):
    """Dual of the length-``q`` problem; returns ``(DualState, bases (n, F, q))``.

    ``D = ||x||^2 - sum_f b_f^T a_f - c sum(lam)``, ``dD_j = ||a_j||^2 - c`` and
    ``H_jk = -2 sum_f a_jf^T [K^{-1}]_jk a_kf`` with ``a_f = K^{-1} b_f``.
    """
    n, q = sysm.n, sysm.q
    lam = _check_lam(lam, n)
    cf, a = _exact_solve(sysm, lam)
    D = float(sysm.energy - np.sum(sysm.b * a) - c * lam.sum())
    A = a.reshape(n, q, -1)  # (n, q, F)
    grad = np.sum(A ** 2, axis=(1, 2)) - c
    hess = np.zeros((n, n))
    if with_hess:
        F = A.shape[2]
        blk = np.zeros((n * q, n * F))
        for k in range(n):
            blk[k * q:(k + 1) * q, k * F:(k + 1) * F] = A[k]
        Z = scipy.linalg.cho_solve(cf, blk, check_finite=False).reshape(n, q, n, F)
        hess = -2.0 * np.einsum("jqf,jqkf->jk", A, Z)
        hess = 0.5 * (hess + hess.T)
    bases = np.ascontiguousarray(A.transpose(0, 2, 1))
    return DualState(lam.copy(), D, grad, hess), bases


def solve_exact_dual(cs: CrossSpectra, c: float, q: int, lam0=None, sysm=None,
                     max_iters: int = 200):
    """Projected Newton on the length-``q`` dual; returns ``(DualSolution, bases)``."""
    sysm = exact_system(cs, q) if sysm is None else sysm
    floor = lambda_floor(cs)
    lam0 = _initial_lambda(cs, floor) if lam0 is None else lam0
    sol = newton_ascent(lambda lam: exact_dual_eval(sysm, lam, c)[0], lam0, floor,
                        _grad_tol(c), max_iters)
    _, bases = exact_dual_eval(sysm, sol.lam, c, with_hess=False)
    return sol, bases


# --------------------------------------------------------------------------
# the basis update step
# --------------------------------------------------------------------------


@dataclass
class BasisUpdate:
    """Result of one basis update.

    ``method`` is ``"fourier"`` when the frequency-domain solution was already
    length ``q``, ``"exact"`` when it was polished by the length-``q`` dual and
    ``"truncated"`` when the problem was too large to polish and the cut
    frequency-domain solution (or the previous bases, if better) was kept.
    """

    basis_set: BasisSet
    lam: np.ndarray
    dual_value: float
    primal: float
    dead: np.ndarray
    method: str
    converged: bool
    tail: float


def reconstruction_error(inputs, coeffs, bases) -> float:
    """``sum_i ||x_i - sum_j a_j * s_ij||^2``."""
    a = as_bases(bases)
    total = 0.0
    for x, s in zip(inputs, coeffs):
        data = as_samples(x)
        op = ConvOperator(a, data.shape[1])
        dense = as_dense_coeffs(s, (op.n, op.T))
        r = data - op.apply(dense)
        total += float(np.sum(r * r))
    return total


def _project_ball(bases, c):
    norms2 = np.sum(bases ** 2, axis=(1, 2))
    over = norms2 > c
    if np.any(over):
        bases = bases.copy()
        bases[over] *= np.sqrt(c / norms2[over])[:, None, None]
    return bases


def update_bases(inputs, coeffs, c: float, prev=None, q: int | None = None,
                 exact_max_dim: int = EXACT_MAX_DIM) -> BasisUpdate:
    """Minimize the reconstruction error over bases with ``||a_j||^2 <= c``.

    Parameters
    ----------
    inputs, coeffs : sequences
        One coefficient map per input.
    prev : BasisSet or array, optional
        Current bases. Bases whose coefficients are all zero keep their
        previous value (zeros if ``prev`` is None) and are flagged in ``dead``.
    q : int, optional
        Basis length; inferred from the coefficient maps when omitted.

    Raises
    ------
    NoUpdateError
        Every coefficient is zero.
    """
    if not c > 0:
        raise InvalidArgument("c must be positive")
    inputs = list(inputs)
    coeffs = list(coeffs)
    cs = precompute_cross_spectra(inputs, coeffs)
    q = cs.q if q is None else q
    alive = cs.active_mask()
    if not alive.any():
        raise NoUpdateError("all coefficients are zero; bases cannot be updated")
    prev_arr = None if prev is None else as_bases(prev)
    if prev_arr is not None and prev_arr.shape != (cs.n, cs.F, q):
        raise InvalidArgument("previous bases have wrong dims")

    sol = solve_dual(cs, c)
    bases, tail = recover_bases(cs, sol.lam, q)
    lam, dual_value, converged, method = sol.lam, sol.state.dual_value / cs.p, sol.converged, "fourier"
    if tail > TAIL_TOL or not sol.converged:
        if cs.n * q <= exact_max_dim:
            ex, bases = solve_exact_dual(cs, c, q, lam0=sol.lam)
            lam, dual_value, converged, method = ex.lam, ex.state.dual_value, ex.converged, "exact"
        else:
            method = "truncated"
            log.warning("basis problem too large for the exact length-%d polish; "
                        "keeping the truncated frequency-domain solution", q)
    bases = _project_ball(bases, c)
    dead = ~alive
    if dead.any():
        bases = bases.copy()
        bases[dead] = 0.0 if prev_arr is None else prev_arr[dead]
    primal = reconstruction_error(inputs, coeffs, bases)
    if method == "truncated" and prev_arr is not None:
        prev_primal = reconstruction_error(inputs, coeffs, prev_arr)
        if prev_primal < primal:
            bases, primal = prev_arr.copy(), prev_primal
    if not converged:
        log.warning("basis dual did not converge")
    return BasisUpdate(BasisSet(bases, c), lam, float(dual_value), primal, dead, method,
                       converged, tail)


# --------------------------------------------------------------------------
# projected stochastic gradient baseline
# --------------------------------------------------------------------------


def gd_basis_step(inputs, coeffs, bases, c: float, rng=None) -> BasisSet:
    """One projected stochastic-gradient pass over the inputs.

    Inputs are visited in a random (seeded) order. Each step moves along the
    gradient of that input's squared error with step ``1 / L_i``, where
    ``L_i = 2 sum_j ||s_ij||_1^2`` bounds the curvature, then projects every
    basis onto ``||a_j||^2 <= c``. This does not solve the subproblem exactly.
    """
    a = np.array(as_bases(bases), dtype=np.float64)
    n, F, q = a.shape
    rng = np.random.default_rng(rng)
    inputs = list(inputs)
    coeffs = list(coeffs)
    for i in rng.permutation(len(inputs)):
        data = as_samples(inputs[i])
        p = data.shape[1]
        s = as_dense_coeffs(coeffs[i], (n, p - q + 1))
        L = 2.0 * float(np.sum(np.abs(s).sum(axis=1) ** 2))
        if L == 0:
            continue
        r = data - ConvOperator(a, p).apply(s)
        # grad[j, f, u] = -2 sum_t s[j, t] r[f, t + u]
        Sh = np.fft.rfft(s, n=p, axis=-1)
        Rh = np.fft.rfft(r, n=p, axis=-1)
        corr = np.fft.irfft(np.conj(Sh)[:, None, :] * Rh[None, :, :], n=p, axis=-1)[:, :, :q]
        a = _project_ball(a + (2.0 / L) * corr, c)
    return BasisSet(a, c)


# --------------------------------------------------------------------------
# spill format
# --------------------------------------------------------------------------


def save_cross_spectra(path, cs: CrossSpectra) -> None:
    """Write the ``SXSP`` layout: header, then one record per frequency.

    Each record holds the lower triangle of ``S_t^* S_t``, then ``S_t^* x_t``
    (basis-major), as little-endian ``(re, im)`` f64 pairs, followed by
    ``||x_t||^2`` as one f64.
    """
    with open(path, "wb") as fh:
        fh.write(SPILL_MAGIC)
        fh.write(struct.pack("<IIIIII", SPILL_VERSION, cs.p, cs.n, cs.F, cs.m, cs.q))
        for t in range(cs.H):
            rec = np.concatenate([cs.sts_tril[t], cs.stx[t].ravel()])
            fh.write(np.ascontiguousarray(rec).astype("<c16").tobytes())
            fh.write(struct.pack("<d", cs.xnorm[t]))


def load_cross_spectra(path) -> CrossSpectra:
    raw = Path(path).read_bytes()
    head = struct.calcsize("<IIIIII")
    if raw[:4] != SPILL_MAGIC or len(raw) < 4 + head:
        raise FormatError(f"{path}: not a SXSP file")
    version, p, n, F, m, q = struct.unpack("<IIIIII", raw[4:4 + head])
    if version != SPILL_VERSION:
        raise FormatError(f"{path}: unsupported SXSP version {version}")
    ntri = n * (n + 1) // 2
    rec_len = 16 * (ntri + n * F) + 8
    H = p // 2 + 1
    body = raw[4 + head:]
    if len(body) != H * rec_len:
        raise FormatError(f"{path}: truncated SXSP payload")
    recs = np.frombuffer(body, dtype=np.dtype([("c", "<c16", (ntri + n * F,)), ("x", "<f8")]))
    return CrossSpectra(p, n, F, m, q, recs["c"][:, :ntri].copy(),
                        recs["c"][:, ntri:].reshape(H, n, F).copy(), recs["x"].copy())
