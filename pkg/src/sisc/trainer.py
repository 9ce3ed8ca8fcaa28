"""Alternating minimization over coefficients and bases.

The corpus is cut into tapered excerpts, split once into ``batch_count``
random batches, and each round visits the batches in turn: solve the
coefficients for the batch (warm-started from that batch's previous
solution), then update the bases on the same batch.
"""

from __future__ import annotations

import csv
import logging
import time
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .basis import gd_basis_step, update_bases
from .errors import InvalidArgument, NoUpdateError
from .model import BasisSet, ConvOperator, save_bases
from .signal import Signal, TaperWindow, excerpt
from .solvers.baselines import gd_full
from .solvers.batch import encode_batch
from .solvers.feature_sign import FsConfig

log = logging.getLogger(__name__)

COEFF_SOLVERS = ("fs_exact", "gd_full")
BASIS_SOLVERS = ("dual", "gd")


@dataclass(frozen=True)
class TrainConfig:
    n: int = 32
    q: int = 64
    beta: float = 1.0
    c: float = 1.0
    excerpt_len: int = 512
    num_rounds: int = 10
    batch_count: int = 2
    seed: int = 0
    coeff_solver: str = "fs_exact"
    basis_solver: str = "dual"
    fs_k: int = 300
    kkt_tol: float = 1e-6
    max_iters: int = 10_000
    window_threshold: int | None = None
    dead_basis_rounds: int = 3
    taper_fraction: float = 0.1
    hop: int | None = None
    workers: int = 1
    # stop early once the round objective improves by less than this over 3 rounds
    min_rel_improvement: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise InvalidArgument("n must be >= 1")
        if not 1 <= self.q <= self.excerpt_len:
            raise InvalidArgument("need 1 <= q <= excerpt_len")
        if self.num_rounds < 0:
            raise InvalidArgument("num_rounds must be >= 0")
        if self.batch_count < 1:
            raise InvalidArgument("batch_count must be >= 1")
        if not (self.beta > 0 and self.c > 0):
            raise InvalidArgument("beta and c must be positive")
        if self.coeff_solver not in COEFF_SOLVERS:
            raise InvalidArgument(f"coeff_solver must be one of {COEFF_SOLVERS}")
        if self.basis_solver not in BASIS_SOLVERS:
            raise InvalidArgument(f"basis_solver must be one of {BASIS_SOLVERS}")
        if self.dead_basis_rounds < 1:
            raise InvalidArgument("dead_basis_rounds must be >= 1")

    @property
    def fs_config(self) -> FsConfig:
        return FsConfig(k=self.fs_k, kkt_tol=self.kkt_tol, max_iters=self.max_iters)

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment, ``none`` clears optional keys."""
        hints = typing.get_type_hints(cls)
        known = {f.name for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidArgument(f"config line {lineno}: expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise InvalidArgument(f"config line {lineno}: unknown key {key!r}")
            values[key] = _coerce(val, hints[key], key)
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'none' if v is None else v}")
        return "\n".join(lines) + "\n"


def _coerce(val: str, hint, key: str):
    args = typing.get_args(hint)
    optional = type(None) in args
    base = next((a for a in args if a is not type(None)), hint) if args else hint
    if optional and val.lower() == "none":
        return None
    try:
        if base is bool:
            if val.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return val.lower() in ("true", "1", "yes")
        if base is int:
            return int(val)
        if base is float:
            return float(val)
    except ValueError:
        raise InvalidArgument(f"config key {key!r}: cannot parse {val!r}") from None
    return val


@dataclass
class RoundRecord:
    round: int
    batch: int
    objective_after_coeffs: float
    objective_after_bases: float
    nonzero_count: int
    elapsed_s: float
    # batch objective with the incoming bases and warm-start coefficients (not written to CSV)
    objective_before_coeffs: float = float("nan")


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    baseline_objective: float = 0.0
    final_bases_path: str | None = None
    reinitialized: list = field(default_factory=list)

    COLUMNS = ("round", "batch", "objective_after_coeffs", "objective_after_bases",
               "nonzero_count", "elapsed_s")

    def write_csv(self, path, include_elapsed: bool = True) -> None:
        cols = self.COLUMNS if include_elapsed else self.COLUMNS[:-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.records:
                row = [r.round, r.batch, repr(r.objective_after_coeffs),
                       repr(r.objective_after_bases), r.nonzero_count]
                if include_elapsed:
                    row.append(f"{r.elapsed_s:.6f}")
                w.writerow(row)

    def round_objectives(self) -> list[float]:
        """Sum over batches of the post-basis objective, one value per round."""
        out = {}
        for r in self.records:
            out[r.round] = out.get(r.round, 0.0) + r.objective_after_bases
        return [out[k] for k in sorted(out)]


def random_bases(rng, n: int, channels: int, q: int, c: float) -> np.ndarray:
    a = rng.standard_normal((n, channels, q))
    norms = np.sqrt(np.sum(a * a, axis=(1, 2), keepdims=True))
    return a * (np.sqrt(c) / norms)


def init_bases(cfg: TrainConfig, rng_seed, channels: int = 1) -> BasisSet:
    """Gaussian bases scaled onto the constraint boundary ``||a_j||^2 = c``."""
    return BasisSet(random_bases(np.random.default_rng(rng_seed), cfg.n, channels, cfg.q, cfg.c),
                    cfg.c)


def make_excerpts(corpus, cfg: TrainConfig) -> list[Signal]:
    taper = TaperWindow(taper_fraction=cfg.taper_fraction) if cfg.taper_fraction > 0 else False
    out = []
    for x in corpus:
        out.extend(excerpt(x, cfg.excerpt_len, taper, cfg.hop))
    return out


def split_batches(count: int, batch_count: int, rng) -> list[np.ndarray]:
    perm = rng.permutation(count)
    return [np.sort(b) for b in np.array_split(perm, min(batch_count, count))]


def batch_objective(xs, bases, coeffs, beta: float) -> tuple[float, float]:
    """``(squared error, L1 penalty)`` summed over a batch."""
    err = 0.0
    pen = 0.0
    a = bases.bases if isinstance(bases, BasisSet) else bases
    for x, s in zip(xs, coeffs):
        op = ConvOperator(a, x.length)
        r = x.samples - op.apply_sparse(s.jj, s.tt, s.values)
        err += float(np.sum(r * r))
        pen += float(np.abs(s.values).sum())
    return err, beta * pen


def _encode(xs, bases, cfg: TrainConfig, warm):
    if cfg.coeff_solver == "gd_full":
        return [gd_full(x, bases.bases, cfg.beta, init=w)[0] for x, w in zip(xs, warm)]
    res = encode_batch(xs, bases.bases, cfg.beta, cfg.fs_config, warm=warm,
                       window_threshold=cfg.window_threshold, workers=cfg.workers)
    return res.coeffs


def train(corpus, cfg: TrainConfig, out_dir=None, init: BasisSet | None = None,
          time_budget: float | None = None, on_step=None):
    """Learn bases by alternating coefficient and basis solves.

    Parameters
    ----------
    corpus : list of Signal
    out_dir : path, optional
        Receives ``bases_round_<k>.sisb`` after every round plus
        ``bases_final.sisb`` and ``report.csv``.
    init : BasisSet, optional
        Starting bases (default :func:`init_bases` with the config seed).
    time_budget : float, optional
        Wall-clock limit in seconds, checked after every batch visit.
    on_step : callable, optional
        Called as ``on_step(record, bases)`` after every batch visit.

    Returns
    -------
    (BasisSet, TrainReport)
    """
    t0 = time.perf_counter()
    xs = make_excerpts(corpus, cfg)
    if not xs:
        raise InvalidArgument("corpus yields no excerpts")
    F = xs[0].channels
    init_seq, split_seq, reinit_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    bases = init if init is not None else init_bases(cfg, init_seq, F)
    if bases.bases.shape != (cfg.n, F, cfg.q):
        raise InvalidArgument("initial bases do not match the config")
    batches = split_batches(len(xs), cfg.batch_count, np.random.default_rng(split_seq))
    reinit_rng = np.random.default_rng(reinit_seq)
    gd_rng = np.random.default_rng(cfg.seed)
    report = TrainReport(baseline_objective=float(sum(np.sum(x.samples ** 2) for x in xs)))
    warm = [[None] * len(b) for b in batches]
    dead_streak = np.zeros(cfg.n, dtype=int)
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
    stop = False
    for rnd in range(1, cfg.num_rounds + 1):
        dead_round = np.ones(cfg.n, dtype=bool)
        for bi, idx in enumerate(batches):
            bx = [xs[i] for i in idx]
            if warm[bi][0] is None:
                obj_before = float(sum(np.sum(x.samples ** 2) for x in bx))
            else:
                obj_before = sum(batch_objective(bx, bases, warm[bi], cfg.beta))
            coeffs = _encode(bx, bases, cfg, warm[bi])
            warm[bi] = coeffs
            err, pen = batch_objective(bx, bases, coeffs, cfg.beta)
            obj_c = err + pen
            if cfg.basis_solver == "dual":
                try:
                    upd = update_bases(bx, coeffs, cfg.c, prev=bases)
                    new_bases = upd.basis_set
                    dead_round &= upd.dead
                    err_b = upd.primal
                except NoUpdateError:
                    log.warning("round %d batch %d: all coefficients zero, bases kept", rnd, bi)
                    new_bases, err_b = bases, err
            else:
                new_bases = gd_basis_step(bx, coeffs, bases, cfg.c, gd_rng)
                dead_round &= np.array([all(not np.any(s.jj == j) for s in coeffs)
                                        for j in range(cfg.n)])
                err_b = batch_objective(bx, new_bases, coeffs, cfg.beta)[0]
            bases = new_bases
            rec = RoundRecord(rnd, bi, obj_c, err_b + pen, sum(s.nnz for s in coeffs),
                              time.perf_counter() - t0, obj_before)
            report.records.append(rec)
            if on_step is not None:
                on_step(rec, bases)
            if time_budget is not None and rec.elapsed_s >= time_budget:
                stop = True
                break
        dead_streak = np.where(dead_round, dead_streak + 1, 0)
        stale = np.nonzero(dead_streak >= cfg.dead_basis_rounds)[0]
        if stale.size:
            arr = np.array(bases.bases)
            arr[stale] = random_bases(reinit_rng, stale.size, F, cfg.q, cfg.c)
            bases = BasisSet(arr, cfg.c)
            dead_streak[stale] = 0
            report.reinitialized.append((rnd, [int(j) for j in stale]))
            log.info("round %d: reinitialized unused bases %s", rnd, stale.tolist())
        if out is not None:
            save_bases(out / f"bases_round_{rnd}.sisb", bases)
        if stop:
            break
        if cfg.min_rel_improvement is not None:
            objs = report.round_objectives()
            if len(objs) > 3:
                prev = objs[-4]
                if prev > 0 and (prev - objs[-1]) / prev < cfg.min_rel_improvement:
                    log.info("stopping after round %d: relative improvement below %g",
                             rnd, cfg.min_rel_improvement)
                    break
    if out is not None:
        final = out / "bases_final.sisb"
        save_bases(final, bases)
        report.final_bases_path = str(final)
        report.write_csv(out / "report.csv")
    return bases, report


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
