from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field


@dataclass
class SolverTrace:
    """Objective value samples against wall-clock time for one solver run."""

    solver_name: str
    samples: list = field(default_factory=list)
    converged: bool = False
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def restart_clock(self):
        self._t0 = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self._t0

    def record(self, objective: float, elapsed: float | None = None):
        t = self.elapsed() if elapsed is None else float(elapsed)
        if self.samples and t < self.samples[-1][0]:
            t = self.samples[-1][0]
        self.samples.append((t, float(objective)))

    @property
    def final_objective(self) -> float:
        return self.samples[-1][1]

    def best_at(self, t: float) -> float:
        """Lowest objective recorded at or before time ``t`` (inf if none)."""
        vals = [obj for ts, obj in self.samples if ts <= t]
        return min(vals) if vals else float("inf")


def write_traces_csv(path, traces, f_star: float | None = None):
    """CSV with header ``solver,elapsed_s,objective`` (plus ``suboptimality`` when ``f_star`` given)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["solver", "elapsed_s", "objective"]
        if f_star is not None:
            header.append("suboptimality")
        w.writerow(header)
        for tr in traces:
            for t, obj in tr.samples:
                row = [tr.solver_name, f"{t:.6f}", repr(float(obj))]
                if f_star is not None:
                    row.append(repr(suboptimality(obj, f_star)))
                w.writerow(row)


def suboptimality(f_alg: float, f_star: float) -> float:
    """Relative excess ``(f_alg - f*) / f*``; absolute gap when ``f* <= 0``."""
    if f_star > 0:
        return float((f_alg - f_star) / f_star)
    return float(f_alg - f_star)
