"""The shift-invariant sparse coding problem.

An input ``x`` with ``F`` channels and ``p`` samples is modelled as

    x ~= sum_j a_j * s_j

where each basis ``a_j`` is an ``F x q`` array and each coefficient vector
``s_j`` has ``T = p - q + 1`` entries (one per shift, shared by all channels).
The coefficient problem for one input is

    min_s ||x - sum_j a_j * s_j||^2 + beta * sum_j ||s_j||_1

and the basis problem constrains ``||a_j||^2 <= c`` (Frobenius norm).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _accel
from .errors import FormatError, InvalidArgument
from .signal import Signal, as_samples

BASIS_MAGIC = b"SISB"
COEFF_MAGIC = b"SISC"
FORMAT_VERSION = 1

FEASIBILITY_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class BasisSet:
    """``n`` shift-invariant bases of shape ``(F, q)`` with squared norm at most ``norm_bound``."""

    bases: np.ndarray
    norm_bound: float = 1.0

    def __post_init__(self):
        arr = np.array(self.bases, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, None, :]
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise InvalidArgument(f"bases must have shape (n, F, q), got {arr.shape}")
        if not self.norm_bound > 0:
            raise InvalidArgument("norm bound c must be positive")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgument("bases must be finite")
        norms = self._norms(arr)
        if np.any(norms > self.norm_bound * (1 + FEASIBILITY_SLACK)):
            raise InvalidArgument(
                f"basis squared norm {norms.max():.6g} exceeds bound {self.norm_bound:.6g}")
        arr.setflags(write=False)
        object.__setattr__(self, "bases", arr)
        object.__setattr__(self, "norm_bound", float(self.norm_bound))

    @staticmethod
    def _norms(arr):
        return np.einsum("jfq,jfq->j", arr, arr)

    @property
    def n(self) -> int:
        return self.bases.shape[0]

    @property
    def channels(self) -> int:
        return self.bases.shape[1]

    @property
    def q(self) -> int:
        return self.bases.shape[2]

    def sq_norms(self) -> np.ndarray:
        return self._norms(self.bases)

    def __eq__(self, other):
        if not isinstance(other, BasisSet):
            return NotImplemented
        return self.norm_bound == other.norm_bound and np.array_equal(self.bases, other.bases)


@dataclass(frozen=True, eq=False)
class SparseCoeffs:
    """Sparse ``(n, T)`` coefficient map stored as (basis, shift, value) triples.

    Triples are kept sorted by ``(basis, shift)`` and only nonzero values are
    stored. ``converged`` records whether the solver that produced the map
    met its stopping criterion.
    """

    shape: tuple[int, int]
    jj: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    tt: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    converged: bool = True

    def __post_init__(self):
        n, T = (int(v) for v in self.shape)
        jj = np.asarray(self.jj, dtype=np.int64).ravel()
        tt = np.asarray(self.tt, dtype=np.int64).ravel()
        vals = np.asarray(self.values, dtype=np.float64).ravel()
        if not (jj.size == tt.size == vals.size):
            raise InvalidArgument("index and value arrays differ in length")
        if jj.size and (jj.min() < 0 or jj.max() >= n or tt.min() < 0 or tt.max() >= T):
            raise InvalidArgument("coefficient index outside (n, T)")
        keep = vals != 0
        jj, tt, vals = jj[keep], tt[keep], vals[keep]
        order = np.lexsort((tt, jj))
        jj, tt, vals = jj[order], tt[order], vals[order]
        if jj.size > 1:
            flat = jj * T + tt
            if np.any(np.diff(flat) == 0):
                raise InvalidArgument("duplicate coefficient entries")
        for a in (jj, tt, vals):
            a.setflags(write=False)
        object.__setattr__(self, "shape", (n, T))
        object.__setattr__(self, "jj", jj)
        object.__setattr__(self, "tt", tt)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_dense(cls, s, converged: bool = True) -> "SparseCoeffs":
        s = np.asarray(s, dtype=np.float64)
        if s.ndim != 2:
            raise InvalidArgument("dense coefficients must be (n, T)")
        jj, tt = np.nonzero(s)
        return cls(s.shape, jj, tt, s[jj, tt], converged)

    @classmethod
    def zeros(cls, n: int, T: int) -> "SparseCoeffs":
        return cls((n, T))

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.jj, self.tt] = self.values
        return out

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def __eq__(self, other):
        if not isinstance(other, SparseCoeffs):
            return NotImplemented
        return (self.shape == other.shape and np.array_equal(self.jj, other.jj)
                and np.array_equal(self.tt, other.tt)
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True)
class SiscProblem:
    inputs: Sequence[Signal]
    bases: BasisSet
    beta: float

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidArgument("beta must be positive")
        for x in self.inputs:
            data = as_samples(x)
            if data.shape[0] != self.bases.channels:
                raise InvalidArgument("input and basis channel counts differ")
            if data.shape[1] < self.bases.q:
                raise InvalidArgument("basis longer than input")


def as_bases(bases) -> np.ndarray:
    if isinstance(bases, BasisSet):
        return bases.bases
    arr = np.asarray(bases, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, None, :]
    return arr


def as_dense_coeffs(coeffs, shape) -> np.ndarray:
    if isinstance(coeffs, SparseCoeffs):
        if coeffs.shape != tuple(shape):
            raise InvalidArgument(f"coefficient dims {coeffs.shape} do not match {tuple(shape)}")
        return coeffs.dense()
    s = np.asarray(coeffs, dtype=np.float64)
    if s.shape != tuple(shape):
        raise InvalidArgument(f"coefficient dims {s.shape} do not match {tuple(shape)}")
    return s


class ConvOperator:
    """Linear map from coefficients ``(n, T)`` to signals ``(F, p)`` for fixed bases.

    Caches the bases' spectra at length ``p``; ``adjoint`` is the
    cross-correlation of a signal with every basis at every shift.
    """

    def __init__(self, bases, p: int):
        self.bases = np.ascontiguousarray(as_bases(bases))
        self.n, self.F, self.q = self.bases.shape
        if self.q > p:
            raise InvalidArgument(f"basis length {self.q} exceeds signal length {p}")
        self.p = int(p)
        self.T = self.p - self.q + 1
        self.spec = np.fft.rfft(self.bases, n=self.p, axis=-1)  # (n, F, H)
        self._lags = None

    def apply(self, s) -> np.ndarray:
        """Dense synthesis ``sum_j a_j * s_j``."""
        s = np.asarray(s, dtype=np.float64)
        S = np.fft.rfft(s, n=self.p, axis=-1)  # (n, H)
        return np.fft.irfft(np.einsum("jfh,jh->fh", self.spec, S), n=self.p, axis=-1)

    def apply_sparse(self, jj, tt, vals) -> np.ndarray:
        out = np.zeros((self.F, self.p))
        if len(vals):
            _accel.add_atoms(out, self.bases, np.asarray(jj, np.int64),
                             np.asarray(tt, np.int64), np.asarray(vals, np.float64))
        return out

    def adjoint(self, r) -> np.ndarray:
        """``out[j, t] = sum_f sum_tau a[j, f, tau] r[f, t + tau]``."""
        R = np.fft.rfft(np.asarray(r, dtype=np.float64), n=self.p, axis=-1)  # (F, H)
        full = np.fft.irfft(np.einsum("jfh,fh->jh", np.conj(self.spec), R), n=self.p, axis=-1)
        return full[:, :self.T]

    @property
    def lags(self) -> np.ndarray:
        """Lag table ``(n, n, 2q - 1)`` of basis cross-correlations."""
        if self._lags is None:
            self._lags = basis_lags(self.bases)
        return self._lags

    def gram(self, jj, tt) -> np.ndarray:
        return _accel.gram(self.lags, np.asarray(jj, np.int64), np.asarray(tt, np.int64), self.q)

    def correlate_at(self, x, jj, tt) -> np.ndarray:
        return _accel.correlate_at(np.ascontiguousarray(x, dtype=np.float64), self.bases,
                                   np.asarray(jj, np.int64), np.asarray(tt, np.int64))


def basis_lags(bases) -> np.ndarray:
    """``lags[j, k, d + q - 1] = sum_f sum_tau a[j, f, tau + d] a[k, f, tau]``.

    Equivalently the inner product between basis ``j`` at shift ``t`` and basis
    ``k`` at shift ``t + d``.
    """
    a = as_bases(bases)
    q = a.shape[2]
    L = 2 * q
    A = np.fft.rfft(a, n=L, axis=-1)
    circ = np.fft.irfft(np.einsum("jfh,kfh->jkh", A, np.conj(A)), n=L, axis=-1)
    # circ[..., d] holds lag d for d >= 0 and lag d - L for d > q
    return np.concatenate([circ[..., L - q + 1:], circ[..., :q]], axis=-1)


# --------------------------------------------------------------------------
# problem functions
# --------------------------------------------------------------------------


def _dims(x, bases):
    data = as_samples(x)
    a = as_bases(bases)
    if data.shape[0] != a.shape[1]:
        raise InvalidArgument("input and basis channel counts differ")
    if a.shape[2] > data.shape[1]:
        raise InvalidArgument("basis longer than input")
    return data, a, (a.shape[0], data.shape[1] - a.shape[2] + 1)


def reconstruct(bases, coeffs, p: int) -> Signal:
    """``sum_j a_j * s_j`` as a ``p``-sample signal."""
    a = as_bases(bases)
    q = a.shape[2]
    T = p - q + 1
    if T < 1:
        raise InvalidArgument("basis longer than requested output")
    op = ConvOperator(a, p)
    if isinstance(coeffs, SparseCoeffs):
        if coeffs.shape != (a.shape[0], T):
            raise InvalidArgument(f"coefficient dims {coeffs.shape} do not match {(a.shape[0], T)}")
        return Signal(op.apply_sparse(coeffs.jj, coeffs.tt, coeffs.values))
    return Signal(op.apply(as_dense_coeffs(coeffs, (a.shape[0], T))))


def residual(x, bases, coeffs) -> np.ndarray:
    data, a, shape = _dims(x, bases)
    return data - reconstruct(a, coeffs, data.shape[1]).samples


def single_objective(x, bases, coeffs, beta: float) -> float:
    """Coefficient objective for one input."""
    data, a, shape = _dims(x, bases)
    s = as_dense_coeffs(coeffs, shape)
    r = data - ConvOperator(a, data.shape[1]).apply(s)
    return float(np.sum(r * r) + beta * np.abs(s).sum())


def objective(problem: SiscProblem, coeffs: Sequence) -> float:
    """Full objective: squared error summed over inputs and channels plus L1 penalty."""
    if len(coeffs) != len(problem.inputs):
        raise InvalidArgument("need one coefficient map per input")
    return float(sum(single_objective(x, problem.bases, s, problem.beta)
                     for x, s in zip(problem.inputs, coeffs)))


def coeff_gradient(x, bases, coeffs) -> np.ndarray:
    """Gradient of the squared-error term with respect to every coefficient, ``(n, T)``."""
    data, a, shape = _dims(x, bases)
    s = as_dense_coeffs(coeffs, shape)
    op = ConvOperator(a, data.shape[1])
    return -2.0 * op.adjoint(data - op.apply(s))


def kkt_from_gradient(g, s, beta: float) -> float:
    nz = s != 0
    viol_nz = np.abs(g[nz] + beta * np.sign(s[nz]))
    viol_z = np.maximum(0.0, np.abs(g[~nz]) - beta)
    return float(max(viol_nz.max(initial=0.0), viol_z.max(initial=0.0)))


def kkt_residual(x, bases, coeffs, beta: float) -> float:
    """Largest violation of the L1 optimality conditions; zero at the optimum."""
    data, a, shape = _dims(x, bases)
    s = as_dense_coeffs(coeffs, shape)
    return kkt_from_gradient(coeff_gradient(data, a, s), s, beta)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------


def save_bases(path, basis_set: BasisSet) -> None:
    """``SISB`` layout: magic, version, n, q, F (u32), c (f64), values basis-major."""
    n, nf, q = basis_set.bases.shape
    with open(path, "wb") as fh:
        fh.write(BASIS_MAGIC)
        fh.write(struct.pack("<IIIId", FORMAT_VERSION, n, q, nf, basis_set.norm_bound))
        fh.write(np.ascontiguousarray(basis_set.bases, dtype="<f8").tobytes())


def load_bases(path) -> BasisSet:
    raw = Path(path).read_bytes()
    head = struct.calcsize("<IIIId")
    if raw[:4] != BASIS_MAGIC or len(raw) < 4 + head:
        raise FormatError(f"{path}: not a SISB basis file")
    version, n, q, nf, c = struct.unpack("<IIIId", raw[4:4 + head])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported SISB version {version}")
    body = raw[4 + head:]
    if len(body) != 8 * n * nf * q:
        raise FormatError(f"{path}: truncated SISB payload")
    return BasisSet(np.frombuffer(body, dtype="<f8").reshape(n, nf, q), c)


_TRIPLE = np.dtype([("j", "<u4"), ("t", "<u4"), ("v", "<f8")])


def save_coeffs(path, coeffs: SparseCoeffs) -> None:
    """``SISC`` layout: magic, version, n, T (u32), count (u64), then (j, t, value) triples.

    Shift indices are stored zero-based.
    """
    n, T = coeffs.shape
    rec = np.empty(coeffs.nnz, dtype=_TRIPLE)
    rec["j"] = coeffs.jj
    rec["t"] = coeffs.tt
    rec["v"] = coeffs.values
    with open(path, "wb") as fh:
        fh.write(COEFF_MAGIC)
        fh.write(struct.pack("<IIIQ", FORMAT_VERSION, n, T, coeffs.nnz))
        fh.write(rec.tobytes())


def load_coeffs(path) -> SparseCoeffs:
    raw = Path(path).read_bytes()
    head = struct.calcsize("<IIIQ")
    if raw[:4] != COEFF_MAGIC or len(raw) < 4 + head:
        raise FormatError(f"{path}: not a SISC coefficient file")
    version, n, T, count = struct.unpack("<IIIQ", raw[4:4 + head])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported SISC version {version}")
    body = raw[4 + head:]
    if len(body) != count * _TRIPLE.itemsize:
        raise FormatError(f"{path}: truncated SISC payload")
    rec = np.frombuffer(body, dtype=_TRIPLE)
    return SparseCoeffs((n, T), rec["j"].astype(np.int64), rec["t"].astype(np.int64),
                        rec["v"].astype(np.float64))
