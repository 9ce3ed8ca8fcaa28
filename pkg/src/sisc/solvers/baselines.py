"""Inexact coefficient solvers used as benchmark baselines.

``gd_full`` is projected gradient descent on the split-variable form of the
L1 problem. ``sl_matching_pursuit`` and ``bd_select`` pick a support greedily
and then run ``gd_full`` restricted to it, so they can only reach the optimum
if the greedy support happens to contain the true one.
"""

from __future__ import annotations

import numpy as np

from .. import _accel
from ..errors import InvalidArgument
from ..model import ConvOperator, SparseCoeffs, as_bases
from ..signal import as_samples
from .trace import SolverTrace

GD_EXIT_WINDOW = 3
MAX_BACKOFFS = 60


def _split_objective(x, op, s, beta):
    r = x - op.apply(s)
    return float(np.sum(r * r) + beta * np.abs(s).sum()), r


def _gram_bound(op: ConvOperator) -> float:
    """Gershgorin bound on the largest eigenvalue of ``A^T A``."""
    return float(np.max(np.abs(op.lags).sum(axis=(1, 2))))


def gd_full(x, bases, beta: float, exit_threshold: float = 1e-6, support=None, init=None,
            max_iters: int = 100_000, time_budget: float | None = None,
            trace: SolverTrace | None = None, name: str = "GD-FULL"):
    """Projected gradient descent with exponential-backoff line search.

    The problem is rewritten over ``u, w >= 0`` with ``s = u - w`` so the L1
    term becomes linear. Each iteration tries a step twice as long as the last
    accepted one and halves it until the objective decreases. The run stops
    when the total decrease over the last three iterations falls below
    ``exit_threshold``, when no decreasing step exists, or when the budget
    runs out.

    Parameters
    ----------
    support : bool array (n, T), optional
        Coefficients outside the mask are held at zero.
    init : dense array (n, T) or SparseCoeffs, optional
        Starting point (projected onto ``support``).
    trace : SolverTrace, optional
        Continue an existing trace (its clock keeps running).

    Returns
    -------
    (SparseCoeffs, SolverTrace)
    """
    if not beta > 0:
        raise InvalidArgument("beta must be positive")
    data = as_samples(x)
    a = as_bases(bases)
    op = ConvOperator(a, data.shape[1])
    shape = (op.n, op.T)
    mask = np.ones(shape, dtype=bool) if support is None else np.asarray(support, dtype=bool)
    if mask.shape != shape:
        raise InvalidArgument("support mask has wrong dims")
    if init is None:
        s = np.zeros(shape)
    else:
        s = init.dense() if isinstance(init, SparseCoeffs) else np.array(init, dtype=np.float64)
        if s.shape != shape:
            raise InvalidArgument("init has wrong dims")
        s = np.where(mask, s, 0.0)
    u = np.maximum(s, 0.0)
    w = np.maximum(-s, 0.0)
    if trace is None:
        trace = SolverTrace(name)
    fcur, r = _split_objective(data, op, u - w, beta)
    trace.record(fcur)
    eta = 1.0 / (2.0 * max(_gram_bound(op), 1e-300))
    history = [fcur]
    for _ in range(max_iters):
        if time_budget is not None and trace.elapsed() >= time_budget:
            break
        g = -2.0 * op.adjoint(r)
        gu = np.where(mask, g + beta, 0.0)
        gw = np.where(mask, beta - g, 0.0)
        eta *= 2.0
        accepted = False
        for _ in range(MAX_BACKOFFS):
            un = np.maximum(u - eta * gu, 0.0)
            wn = np.maximum(w - eta * gw, 0.0)
            fnew, rnew = _split_objective(data, op, un - wn, beta)
            if fnew < fcur:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
        u, w, fcur, r = un, wn, fnew, rnew
        trace.record(fcur)
        history.append(fcur)
        if len(history) > GD_EXIT_WINDOW and history[-1 - GD_EXIT_WINDOW] - fcur < exit_threshold:
            break
    return SparseCoeffs.from_dense(u - w, converged=False), trace


def sl_matching_pursuit(x, bases, beta: float, max_atoms: int | None = None,
                        exit_threshold: float = 1e-6, time_budget: float | None = None):
    """Matching-pursuit support selection followed by restricted ``gd_full``.

    Each step takes the shifted atom with the largest normalized correlation
    to the residual and subtracts its projection. Selection stops after
    ``max_atoms`` steps (default: one per input sample) or once no correlation
    reaches ``beta / 2``, the level below which L1 activation never pays.
    """
    data = as_samples(x)
    a = as_bases(bases)
    op = ConvOperator(a, data.shape[1])
    if max_atoms is None:
        max_atoms = data.size
    if max_atoms < 1:
        raise InvalidArgument("max_atoms must be >= 1")
    trace = SolverTrace("SL")
    norms2 = np.sum(a * a, axis=(1, 2))
    live = norms2 > 0
    inv_norm = np.where(live, 1.0 / np.sqrt(np.where(live, norms2, 1.0)), 0.0)
    corr = op.adjoint(data)
    lags = op.lags
    s = np.zeros((op.n, op.T))
    for _ in range(max_atoms):
        if np.max(np.abs(corr)) < beta / 2:
            break
        score = np.abs(corr) * inv_norm[:, None]
        j, t = np.unravel_index(int(np.argmax(score)), score.shape)
        v = corr[j, t] / norms2[j]
        s[j, t] += v
        _accel.mp_update(corr, lags, int(j), int(t), float(v), op.q)
    support = s != 0
    trace.record(_split_objective(data, op, s, beta)[0])
    if not support.any():
        return SparseCoeffs.zeros(op.n, op.T), trace
    return gd_full(data, a, beta, exit_threshold, support=support, init=s,
                   time_budget=time_budget, trace=trace)


def bd_select(x, bases, beta: float, neighbor_radius: int | None = None,
              max_atoms: int | None = None, exit_threshold: float = 1e-6,
              time_budget: float | None = None):
    """Gradient-ranked support selection with same-basis neighbour suppression.

    Coefficients are visited in order of decreasing ``|gradient|`` at zero.
    A coefficient is taken if no earlier pick of the same basis lies within
    ``neighbor_radius`` shifts (default ``q // 2``); only those with
    ``|gradient| > beta`` qualify. ``gd_full`` then runs on the chosen support.
    """
    data = as_samples(x)
    a = as_bases(bases)
    op = ConvOperator(a, data.shape[1])
    radius = op.q // 2 if neighbor_radius is None else int(neighbor_radius)
    if radius < 0:
        raise InvalidArgument("neighbor_radius must be >= 0")
    if max_atoms is None:
        max_atoms = data.size
    trace = SolverTrace("BD")
    absg = np.abs(2.0 * op.adjoint(data))
    flat = absg.ravel()
    order = np.argsort(-flat, kind="stable")
    masked = np.zeros((op.n, op.T), dtype=bool)
    support = np.zeros((op.n, op.T), dtype=bool)
    picked = 0
    for idx in order:
        if picked >= max_atoms or flat[idx] <= beta:
            break
        j, t = divmod(int(idx), op.T)
        if masked[j, t]:
            continue
        support[j, t] = True
        masked[j, max(0, t - radius):t + radius + 1] = True
        picked += 1
    trace.record(float(np.sum(data * data)))
    if not support.any():
        return SparseCoeffs.zeros(op.n, op.T), trace
    return gd_full(data, a, beta, exit_threshold, support=support, time_budget=time_budget,
                   trace=trace)
