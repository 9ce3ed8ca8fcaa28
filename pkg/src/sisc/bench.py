"""Solver benchmarks: suboptimality against time for the coefficient solvers,
and training objective against time for coefficient/basis solver pairs."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgument
from .model import BasisSet, ConvOperator, single_objective
from .solvers.baselines import bd_select, gd_full, sl_matching_pursuit
from .solvers.feature_sign import FsConfig, fs_exact
from .solvers.trace import SolverTrace, suboptimality
from .synth import smooth_bases, sparse_spikes
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

COEFF_SOLVERS = ("FS-EXACT", "GD-FULL", "SL", "BD")
COMBOS = (("fs_exact", "dual"), ("fs_exact", "gd"), ("gd_full", "dual"), ("gd_full", "gd"))
F_STAR_TOL = 1e-10


def combo_name(coeff_solver: str, basis_solver: str) -> str:
    return {"fs_exact": "FS-EXACT", "gd_full": "GD-FULL"}[coeff_solver] + "+" + \
        {"dual": "DUAL", "gd": "GD-BASIS"}[basis_solver]


@dataclass
class CoeffInstance:
    x: np.ndarray  # (F, p)
    bases: np.ndarray  # (n, F, q)
    beta: float
    seed: int = 0


def make_coeff_instance(p: int = 4000, n: int = 32, q: int | None = None, beta: float = 1.0,
                        seed: int = 0, sample_rate_hz: float = 4000.0, density: float = 0.002,
                        noise_sigma: float = 0.05, c: float = 1.0) -> CoeffInstance:
    """Sparse superposition of smooth random bases plus white noise.

    The default is a 1 s signal at 4 kHz with 32 bases of 188 ms.
    """
    q = int(round(0.188 * sample_rate_hz)) if q is None else q
    if not 1 <= q <= p:
        raise InvalidArgument("need 1 <= q <= p")
    rng = np.random.default_rng(seed)
    a = smooth_bases(rng, n, 1, q, c)
    op = ConvOperator(a, p)
    s = sparse_spikes(rng, n, op.T, density, 1.0)
    x = op.apply(s) + noise_sigma * rng.standard_normal((1, p))
    return CoeffInstance(x, a, beta, seed)


def _thin(trace: SolverTrace, interval: float | None) -> SolverTrace:
    """Keep at most one sample per ``interval`` seconds (the last in each bin)."""
    if not interval or len(trace.samples) < 3:
        return trace
    kept = []
    for t, obj in trace.samples:
        if kept and int(t // interval) == int(kept[-1][0] // interval):
            kept[-1] = (t, obj)
        else:
            kept.append((t, obj))
    if kept[0] != trace.samples[0]:
        kept.insert(0, trace.samples[0])
    out = SolverTrace(trace.solver_name, kept, trace.converged)
    return out


@dataclass
class CoeffBenchResult:
    f_star: float
    absolute_gap: bool  # True when f* <= 0 and the gap is reported unnormalized
    traces: list = field(default_factory=list)

    def suboptimality_at(self, name: str, t: float | None = None) -> float:
        tr = next(tr for tr in self.traces if tr.solver_name == name)
        f = tr.final_objective if t is None else tr.best_at(t)
        return suboptimality(f, self.f_star)

    def finish_time(self, name: str) -> float:
        tr = next(tr for tr in self.traces if tr.solver_name == name)
        return tr.samples[-1][0]

    def write_csv(self, path) -> None:
        """Columns ``solver,elapsed_s,objective,suboptimality,absolute_gap``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["solver", "elapsed_s", "objective", "suboptimality", "absolute_gap"])
            for tr in self.traces:
                for t, obj in tr.samples:
                    w.writerow([tr.solver_name, f"{t:.6f}", repr(float(obj)),
                                repr(suboptimality(obj, self.f_star)), int(self.absolute_gap)])


def bench_coeff(instance: CoeffInstance, solvers=COEFF_SOLVERS, time_budget: float | dict = 60.0,
                sample_interval: float | None = None, fs_cfg: FsConfig | None = None) -> CoeffBenchResult:
    """Run each coefficient solver on one instance and trace its objective.

    ``time_budget`` is in seconds, either shared or a mapping from solver name
    to budget (FS-EXACT always runs to convergence).
    ``f*`` comes from a separate FS-EXACT solve at KKT tolerance 1e-10.
    Suboptimality is ``(f - f*) / f*``; when ``f* <= 0`` the absolute gap is
    used instead and the result is flagged.
    """
    unknown = set(solvers) - set(COEFF_SOLVERS)
    if unknown:
        raise InvalidArgument(f"unknown solvers {sorted(unknown)}")
    x, a, beta = instance.x, instance.bases, instance.beta
    tight = replace(fs_cfg or FsConfig(), kkt_tol=F_STAR_TOL, max_iters=10 ** 6)
    ref = fs_exact(x, a, beta, cfg=tight)
    f_star = single_objective(x, a, ref, beta)
    flagged = not f_star > 0
    if flagged:
        log.warning("f* = %g <= 0; reporting absolute gaps", f_star)
    traces = []
    for name in solvers:
        budget = time_budget.get(name, 60.0) if isinstance(time_budget, dict) else time_budget
        if name == "FS-EXACT":
            tr = SolverTrace(name)
            fs_exact(x, a, beta, cfg=tight, trace=tr)
        elif name == "GD-FULL":
            _, tr = gd_full(x, a, beta, exit_threshold=0.0, time_budget=budget)
        elif name == "SL":
            _, tr = sl_matching_pursuit(x, a, beta, time_budget=budget)
        else:
            _, tr = bd_select(x, a, beta, time_budget=budget)
        traces.append(_thin(tr, sample_interval))
    return CoeffBenchResult(f_star, flagged, traces)


@dataclass
class BasisBenchResult:
    traces: list = field(default_factory=list)

    def final(self, name: str, t: float | None = None) -> float:
        tr = next(tr for tr in self.traces if tr.solver_name == name)
        return tr.final_objective if t is None else tr.best_at(t)

    def write_csv(self, path) -> None:
        """Columns ``combo,elapsed_s,objective``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["combo", "elapsed_s", "objective"])
            for tr in self.traces:
                for t, obj in tr.samples:
                    w.writerow([tr.solver_name, f"{t:.6f}", repr(float(obj))])


def bench_basis(corpus, cfg: TrainConfig, combos=COMBOS, time_budget: float | None = None,
                init: BasisSet | None = None) -> BasisBenchResult:
    """Train once per (coefficient solver, basis solver) pair from the same start.

    Each trace holds the full objective (sum over batches of the latest
    post-basis-step objective) after every batch visit, starting from the
    objective of the all-zero coefficients.
    """
    traces = []
    for coeff_solver, basis_solver in combos:
        run_cfg = replace(cfg, coeff_solver=coeff_solver, basis_solver=basis_solver,
                          min_rel_improvement=None)
        tr = SolverTrace(combo_name(coeff_solver, basis_solver))
        latest = {}

        def on_step(rec, bases, tr=tr, latest=latest):
            latest[rec.batch] = rec.objective_after_bases
            if len(latest) == run_cfg.batch_count or rec.round > 1:
                tr.record(sum(latest.values()))

        _, report = train(corpus, run_cfg, init=init, time_budget=time_budget, on_step=on_step)
        tr.samples.insert(0, (0.0, report.baseline_objective))
        traces.append(tr)
    return BasisBenchResult(traces)
