"""Command-line entry point.

Exit status is 0 on success, 1 on a usage error and 2 on a data error
(unreadable or malformed input, failed numerical preconditions).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .bench import COEFF_SOLVERS, COMBOS, bench_basis, bench_coeff, make_coeff_instance
from .errors import FormatError, SiscError
from .model import kkt_residual, load_bases, save_bases, save_coeffs
from .selftaught import (aggregate_svm, aggregate_windows, extract_features, gda_fit, load_model,
                         multiexp_fit, read_manifest, save_model, svm_fit, write_manifest)
from .signal import (Signal, load_signal, make_freq_grid, read_wav, save_signal, spectrogram)
from .solvers.batch import encode_one
from .solvers.feature_sign import FsConfig
from .synth import SynthSpec, synth_dataset
from .trainer import TrainConfig, train, with_overrides

log = logging.getLogger("sisc")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def read_signal(path) -> Signal:
    """Load a ``.wav`` file or a ``SISG`` signal binary."""
    path = Path(path)
    if path.suffix.lower() == ".wav":
        return read_wav(path)
    return load_signal(path)


def _inputs(args) -> list[Path]:
    paths = [Path(p) for p in args.inputs]
    if getattr(args, "manifest", None):
        paths += [p for p, _ in read_manifest(args.manifest)]
    if not paths:
        raise UsageError("no input signals given")
    return paths


def _out(args, default: str) -> Path:
    return Path(args.out) if args.out else Path(default)


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    over = {}
    for f in fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            over[f.name] = v
    if args.seed is not None:
        over["seed"] = args.seed
    return with_overrides(cfg, **over)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_synth(args):
    spec = SynthSpec(n_true=args.n_true, q=args.q, p=args.p, spike_density=args.density,
                     beta_gen=args.beta_gen, noise_sigma=args.noise_sigma, m=args.m,
                     seed=args.seed or 0, sample_rate_hz=args.rate)
    res = synth_dataset(spec)
    out = _out(args, "synth")
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (x, s) in enumerate(zip(res.corpus, res.coeffs)):
        save_signal(out / f"signal_{i:04d}.sisg", x)
        save_coeffs(out / f"coeffs_{i:04d}.sisc", s)
        entries.append((f"signal_{i:04d}.sisg", "unlabeled"))
    save_bases(out / "truth.sisb", res.truth)
    write_manifest(out / "manifest.csv", entries)
    print(f"wrote {len(entries)} signals to {out}")


def cmd_train(args):
    cfg = _train_config(args)
    corpus = [read_signal(p) for p in _inputs(args)]
    out = _out(args, "run")
    bases, report = train(corpus, cfg, out_dir=out, time_budget=args.budget)
    (out / "train.cfg").write_text(cfg.to_text())
    objs = report.round_objectives()
    print(f"rounds={len(objs)} final_objective={objs[-1] if objs else report.baseline_objective!r}"
          f" bases={report.final_bases_path}")


def cmd_encode(args):
    bases = load_bases(args.bases)
    x = read_signal(args.input)
    cfg = FsConfig(k=args.k, kkt_tol=args.kkt_tol)
    s = encode_one(x, bases, args.beta, cfg, window_threshold=args.window_threshold)
    save_coeffs(_out(args, Path(args.input).with_suffix(".sisc").name), s)
    print(f"nnz={s.nnz} kkt={kkt_residual(x, bases, s, args.beta):.3e} converged={s.converged}")


def _feature_rows(ft, window, hop, aggregate, include_counts):
    if aggregate:
        return [aggregate_svm(ft, aggregate, include_counts)]
    return list(aggregate_windows(ft, window, hop))


def cmd_features(args):
    bases = load_bases(args.bases)
    entries = read_manifest(args.manifest)
    out = _out(args, "features.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        dim = None
        for path, label in entries:
            ft = extract_features(read_signal(path), bases, args.beta)
            rows = _feature_rows(ft, args.window, args.hop, args.aggregate, args.counts)
            if dim is None:
                dim = len(rows[0])
                w.writerow(["path", "label", "index"] + [f"f{i}" for i in range(dim)])
            for i, r in enumerate(rows):
                w.writerow([str(path), label, i] + [repr(float(v)) for v in r])
    meta = {"bases": str(Path(args.bases).resolve()), "beta": repr(args.beta),
            "window": args.window, "hop": args.hop, "aggregate": args.aggregate or "none",
            "counts": args.counts}
    Path(str(out) + ".meta").write_text("".join(f"{k} = {v}\n" for k, v in meta.items()))
    print(f"wrote features for {len(entries)} inputs to {out}")


def _read_features(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[0][:3] != ["path", "label", "index"]:
        raise FormatError(f"{path}: not a feature table")
    samples = [(np.array([float(v) for v in r[3:]]), r[1]) for r in rows[1:]]
    meta_path = Path(str(path) + ".meta")
    meta = {}
    if meta_path.exists():
        for line in meta_path.read_text().splitlines():
            if "=" in line:
                k, v = (part.strip() for part in line.split("=", 1))
                meta[k] = v
    return samples, meta


def cmd_fit(args):
    samples, meta = _read_features(args.features)
    if args.classifier == "gda":
        model = gda_fit(samples, cov_type=args.cov, ridge=args.ridge)
    elif args.classifier == "multiexp":
        model = multiexp_fit(samples, smoothing=args.smoothing, alpha=args.alpha)
    else:
        model = svm_fit(samples, C=args.C, epochs=args.epochs, seed=args.seed or 0,
                        mode=meta.get("aggregate", "abs"),
                        include_counts=meta.get("counts") == "True")
    model.meta.update(meta)
    out = _out(args, f"model.{args.classifier}")
    save_model(out, model)
    print(f"fitted {args.classifier} on {len(samples)} samples; classes {model.classes}")


def cmd_predict(args):
    model = load_model(args.model)
    meta = model.meta
    bases_path = args.bases or meta.get("bases")
    beta = args.beta if args.beta is not None else float(meta.get("beta", "nan"))
    if not bases_path or not np.isfinite(beta):
        raise UsageError("model carries no bases/beta; pass --bases and --beta")
    bases = load_bases(bases_path)
    ft = extract_features(read_signal(args.input), bases, beta)
    aggregate = meta.get("aggregate", "none")
    if aggregate != "none":
        vec = aggregate_svm(ft, aggregate, meta.get("counts") == "True")
        print(model.predict(vec) if hasattr(model, "decision") else model.predict(vec[None, :]))
    else:
        print(model.predict(aggregate_windows(ft, int(meta.get("window", 1)),
                                              int(meta.get("hop", 1)))))


def cmd_bench_coeff(args):
    inst = make_coeff_instance(p=args.p, n=args.n, q=args.q, beta=args.beta, seed=args.seed or 0,
                               sample_rate_hz=args.rate, density=args.density)
    res = bench_coeff(inst, args.solvers, time_budget=args.budget, sample_interval=args.interval)
    out = _out(args, "bench_coeff.csv")
    res.write_csv(out)
    print(f"f*={res.f_star!r}{' (absolute gaps)' if res.absolute_gap else ''}")
    for tr in res.traces:
        print(f"{tr.solver_name}: final suboptimality {res.suboptimality_at(tr.solver_name):.3e}"
              f" after {tr.samples[-1][0]:.2f}s")
    print(f"wrote {out}")


def cmd_bench_basis(args):
    cfg = _train_config(args)
    if args.inputs or args.manifest:
        corpus = [read_signal(p) for p in _inputs(args)]
    else:
        spec = SynthSpec(n_true=max(1, cfg.n // 2), q=cfg.q, p=cfg.excerpt_len, m=args.m,
                         seed=cfg.seed, noise_sigma=0.05)
        corpus = synth_dataset(spec).corpus
    res = bench_basis(corpus, cfg, COMBOS, time_budget=args.budget)
    out = _out(args, "bench_basis.csv")
    res.write_csv(out)
    for tr in res.traces:
        print(f"{tr.solver_name}: final objective {tr.final_objective!r}")
    print(f"wrote {out}")


def cmd_spectrogram(args):
    x = read_signal(args.input)
    fmax = args.fmax if args.fmax is not None else 0.45 * x.sample_rate_hz
    grid = make_freq_grid(args.fmin, fmax, args.nfreq, args.spacing)
    spec = spectrogram(x, args.window_len, args.overlap, grid, args.scale)
    out = _out(args, Path(args.input).stem + ".spec.sisg")
    save_signal(out, spec)
    print(f"wrote {spec.channels} x {spec.length} spectrogram to {out}")


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="random seed")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", help="output path")
    p.add_argument("-v", "--verbose", action="store_true")


def _train_flags(p):
    p.add_argument("--n", type=int, help="number of bases")
    p.add_argument("--q", type=int, help="basis length in samples")
    p.add_argument("--beta", type=float)
    p.add_argument("--c", type=float, help="basis squared-norm bound")
    p.add_argument("--excerpt-len", dest="excerpt_len", type=int)
    p.add_argument("--rounds", dest="num_rounds", type=int)
    p.add_argument("--coeff-solver", dest="coeff_solver", choices=["fs_exact", "gd_full"])
    p.add_argument("--basis-solver", dest="basis_solver", choices=["dual", "gd"])
    p.add_argument("--workers", type=int)
    p.add_argument("--budget", type=float, help="wall-clock limit in seconds")
    p.add_argument("--manifest", help="CSV manifest of input signals")
    p.add_argument("inputs", nargs="*", help="signal files (.sisg or .wav)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sisc", description="Shift-invariant sparse coding toolkit")
    parser.add_argument("--version", action="version", version=f"sisc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a planted synthetic corpus")
    _common(p)
    p.add_argument("--n-true", dest="n_true", type=int, default=4)
    p.add_argument("--q", type=int, default=32)
    p.add_argument("--p", type=int, default=512)
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--density", type=float, default=0.02)
    p.add_argument("--beta-gen", dest="beta_gen", type=float, default=1.0)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=0.01)
    p.add_argument("--rate", type=float, default=1.0, help="sample rate in Hz")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="learn bases from unlabeled signals")
    _common(p)
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="exact sparse coefficients of one signal")
    _common(p)
    p.add_argument("--bases", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--k", type=int, default=300)
    p.add_argument("--kkt-tol", dest="kkt_tol", type=float, default=1e-6)
    p.add_argument("--window-threshold", dest="window_threshold", type=int)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("features", help="feature table for a labelled manifest")
    _common(p)
    p.add_argument("--bases", required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--window", type=int, default=1, help="window length W in shifts")
    p.add_argument("--hop", type=int, default=1)
    p.add_argument("--aggregate", choices=["sqrt", "abs", "square"],
                   help="one aggregated vector per input instead of windows")
    p.add_argument("--counts", action="store_true", help="append nonzero frequencies")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("fit", help="fit a classifier to a feature table")
    _common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--classifier", choices=["gda", "multiexp", "svm"], default="gda")
    p.add_argument("--cov", choices=["diag", "full"], default="diag")
    p.add_argument("--ridge", type=float, default=1e-6)
    p.add_argument("--smoothing", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=30)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="classify one signal")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--bases")
    p.add_argument("--beta", type=float)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench-coeff", help="coefficient solver suboptimality traces")
    _common(p)
    p.add_argument("--p", type=int, default=4000)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--q", type=int, help="basis length (default 188 ms)")
    p.add_argument("--rate", type=float, default=4000.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--density", type=float, default=0.002)
    p.add_argument("--budget", type=float, default=60.0)
    p.add_argument("--interval", type=float, help="minimum seconds between trace samples")
    p.add_argument("--solvers", nargs="+", choices=COEFF_SOLVERS, default=list(COEFF_SOLVERS))
    p.set_defaults(func=cmd_bench_coeff)

    p = sub.add_parser("bench-basis", help="training objective traces per solver pair")
    _common(p)
    _train_flags(p)
    p.add_argument("--m", type=int, default=8, help="synthetic corpus size")
    p.set_defaults(func=cmd_bench_basis)

    p = sub.add_parser("spectrogram", help="magnitude spectrogram of a waveform")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--window-len", dest="window_len", type=int, default=256)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--fmin", type=float, default=0.0)
    p.add_argument("--fmax", type=float)
    p.add_argument("--nfreq", type=int, default=128)
    p.add_argument("--spacing", choices=["linear", "log"], default="linear")
    p.add_argument("--scale", choices=["linear", "log"], default="log")
    p.set_defaults(func=cmd_spectrogram)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"sisc {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SiscError, OSError, ValueError) as exc:
        print(f"sisc {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
