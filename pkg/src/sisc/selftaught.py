"""Classification features from learned bases, and the classifiers that use them.

Each labelled input is encoded exactly against bases learned on unlabelled
data, giving an ``n x T`` activation map. Maps are summarized either into
one vector per input (``aggregate_svm``) or into sliding-window averages that
are treated as independent samples (``aggregate_windows``) and scored with
GDA or with the sign/exponential model ``MultiExp``.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import FormatError, InvalidArgument
from .solvers.batch import encode_batch, encode_one
from .solvers.feature_sign import FsConfig

log = logging.getLogger(__name__)

ZERO_TOL = 1e-12
SIGN_ORDER = ("+", "0", "-")


# --------------------------------------------------------------------------
# features
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureTensor:
    values: np.ndarray  # (n, T)
    converged: bool = True

    @property
    def nonzero_mask(self) -> np.ndarray:
        return np.abs(self.values) >= ZERO_TOL

    @property
    def shape(self):
        return self.values.shape


def extract_features(x, bases, beta: float, cfg: FsConfig | None = None,
                     window_threshold: int | None = None) -> FeatureTensor:
    """Dense activation map of the exact L1 encoding of ``x``."""
    s = encode_one(x, bases, beta, cfg, window_threshold=window_threshold)
    if not s.converged:
        log.warning("feature extraction did not reach the KKT tolerance")
    return FeatureTensor(s.dense(), s.converged)


def extract_features_batch(inputs, bases, beta: float, cfg: FsConfig | None = None,
                           window_threshold: int | None = None, workers: int = 1) -> list:
    res = encode_batch(inputs, bases, beta, cfg, window_threshold=window_threshold,
                       workers=workers)
    return [FeatureTensor(s.dense(), s.converged) for s in res.coeffs]


def _values(ft) -> np.ndarray:
    return ft.values if isinstance(ft, FeatureTensor) else np.asarray(ft, dtype=np.float64)


def aggregate_svm(ft, mode: str = "abs", include_counts: bool = False) -> np.ndarray:
    """Per-basis mean over shifts of ``sqrt|v|``, ``|v|`` or ``v^2``.

    ``include_counts`` appends the per-basis fraction of nonzero shifts.
    """
    v = _values(ft)
    if mode == "sqrt":
        agg = np.sqrt(np.abs(v)).mean(axis=1)
    elif mode == "abs":
        agg = np.abs(v).mean(axis=1)
    elif mode == "square":
        agg = (v * v).mean(axis=1)
    else:
        raise InvalidArgument(f"unknown aggregation mode {mode!r}")
    if include_counts:
        agg = np.concatenate([agg, (np.abs(v) >= ZERO_TOL).mean(axis=1)])
    return agg


def aggregate_windows(ft, W: int, hop: int = 1) -> np.ndarray:
    """Means over ``W`` consecutive shifts, one row per window, shape ``(k, n)``.

    ``W`` larger than the map gives a single whole-map window.
    """
    v = _values(ft)
    if W < 1 or hop < 1:
        raise InvalidArgument("W and hop must be >= 1")
    T = v.shape[1]
    if W >= T:
        return v.mean(axis=1)[None, :]
    csum = np.concatenate([np.zeros((v.shape[0], 1)), np.cumsum(v, axis=1)], axis=1)
    starts = np.arange(0, T - W + 1, hop)
    return ((csum[:, starts + W] - csum[:, starts]) / W).T


def _stack(samples):
    """Split ``[(vector, label), ...]`` into an ``(N, d)`` array and a label list."""
    X = np.array([np.asarray(v, dtype=np.float64) for v, _ in samples])
    y = [lab for _, lab in samples]
    if X.ndim != 2 or len(y) == 0:
        raise InvalidArgument("need a nonempty list of (vector, label) pairs")
    return X, y


def _classes(y):
    classes = sorted(set(y), key=lambda v: (str(type(v)), v))
    return classes


def _posterior(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    return np.exp(scores - logsumexp(scores))


# --------------------------------------------------------------------------
# GDA
# --------------------------------------------------------------------------


@dataclass
class GdaModel:
    classes: list
    means: np.ndarray  # (C, n)
    covs: np.ndarray  # (C, n, n)
    priors: np.ndarray  # (C,)
    cov_type: str = "diag"
    ridge: float = 1e-6
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._chol = [np.linalg.cholesky(S) for S in self.covs]

    def class_scores(self, windows) -> np.ndarray:
        """``sum_w log N(w; mu_y, Sigma_y) + log P(y)`` for every class."""
        W = np.atleast_2d(np.asarray(windows, dtype=np.float64))
        n = W.shape[1]
        out = np.empty(len(self.classes))
        for c, L in enumerate(self._chol):
            z = np.linalg.solve(L, (W - self.means[c]).T)
            logdet = 2.0 * np.sum(np.log(np.diag(L)))
            ll = -0.5 * (np.sum(z * z, axis=0) + logdet + n * np.log(2 * np.pi))
            out[c] = ll.sum() + np.log(self.priors[c])
        return out

    def posterior(self, windows) -> np.ndarray:
        return _posterior(self.class_scores(windows))

    def predict(self, windows):
        return self.classes[int(np.argmax(self.class_scores(windows)))]


def gda_fit(samples, cov_type: str = "diag", ridge: float = 1e-6) -> GdaModel:
    """Maximum-likelihood class Gaussians with ``ridge * I`` added to each covariance."""
    if cov_type not in ("diag", "full"):
        raise InvalidArgument("cov_type must be 'diag' or 'full'")
    X, y = _stack(samples)
    classes = _classes(y)
    if len(classes) < 2:
        raise InvalidArgument("GDA needs at least two classes")
    y_arr = np.array([classes.index(v) for v in y])
    n = X.shape[1]
    means = np.zeros((len(classes), n))
    covs = np.zeros((len(classes), n, n))
    priors = np.zeros(len(classes))
    for c in range(len(classes)):
        Xc = X[y_arr == c]
        means[c] = Xc.mean(axis=0)
        d = Xc - means[c]
        S = d.T @ d / len(Xc)
        if cov_type == "diag":
            S = np.diag(np.diag(S))
        covs[c] = S
        priors[c] = len(Xc) / len(X)
    eye = np.eye(n)
    r = ridge
    while True:
        try:
            for S in covs:
                np.linalg.cholesky(S + r * eye)
            break
        except np.linalg.LinAlgError:
            r = max(r * 10.0, 1e-12)
            warnings.warn(f"singular class covariance; increasing ridge to {r:g}", RuntimeWarning)
    return GdaModel(classes, means, covs + r * eye, priors, cov_type, r)


def gda_predict(model: GdaModel, windows):
    return model.predict(windows)


# --------------------------------------------------------------------------
# MultiExp
# --------------------------------------------------------------------------


@dataclass
class MultiExpModel:
    """Per class and basis: sign probabilities ``phi`` (+, 0, -) and exponential means ``b``."""

    classes: list
    phi: np.ndarray  # (C, n, 3)
    b_pos: np.ndarray  # (C, n)
    b_neg: np.ndarray  # (C, n)
    priors: np.ndarray
    alpha: float = 1.0
    smoothing: float = 1.0
    meta: dict = field(default_factory=dict)

    def class_scores(self, windows, alpha: float | None = None) -> np.ndarray:
        """``sum_w sum_j [alpha log phi(z) + log Exp(|v|; b_z)] + log P(y)``."""
        alpha = self.alpha if alpha is None else alpha
        V = np.atleast_2d(np.asarray(windows, dtype=np.float64))
        pos = V >= ZERO_TOL
        neg = V <= -ZERO_TOL
        zero = ~(pos | neg)
        absv = np.abs(V)
        out = np.empty(len(self.classes))
        logphi = np.log(self.phi)
        for c in range(len(self.classes)):
            sign_term = (pos.sum(0) @ logphi[c, :, 0] + zero.sum(0) @ logphi[c, :, 1]
                         + neg.sum(0) @ logphi[c, :, 2])
            bp, bn = self.b_pos[c], self.b_neg[c]
            mag = (np.sum(np.where(pos, -np.log(bp) - absv / bp, 0.0))
                   + np.sum(np.where(neg, -np.log(bn) - absv / bn, 0.0)))
            out[c] = alpha * sign_term + mag + np.log(self.priors[c])
        return out

    def posterior(self, windows) -> np.ndarray:
        return _posterior(self.class_scores(windows))

    def predict(self, windows):
        return self.classes[int(np.argmax(self.class_scores(windows)))]


def multiexp_fit(samples, smoothing: float = 1.0, alpha: float = 1.0) -> MultiExpModel:
    """Smoothed sign frequencies and smoothed mean magnitudes per class and basis.

    ``phi = (count + smoothing) / (total + 3 smoothing)``. Each exponential
    mean adds ``smoothing`` pseudo-observations at the global mean magnitude
    of the nonzero features.
    """
    if not smoothing > 0:
        raise InvalidArgument("smoothing must be positive")
    X, y = _stack(samples)
    classes = _classes(y)
    y_arr = np.array([classes.index(v) for v in y])
    nz = np.abs(X) >= ZERO_TOL
    gmean = float(np.abs(X[nz]).mean()) if nz.any() else 1.0
    C, n = len(classes), X.shape[1]
    phi = np.zeros((C, n, 3))
    b_pos = np.zeros((C, n))
    b_neg = np.zeros((C, n))
    priors = np.zeros(C)
    for c in range(C):
        Xc = X[y_arr == c]
        pos = Xc >= ZERO_TOL
        neg = Xc <= -ZERO_TOL
        counts = np.stack([pos.sum(0), (~(pos | neg)).sum(0), neg.sum(0)], axis=1)
        phi[c] = (counts + smoothing) / (len(Xc) + 3 * smoothing)
        b_pos[c] = (np.where(pos, Xc, 0.0).sum(0) + smoothing * gmean) / (pos.sum(0) + smoothing)
        b_neg[c] = (np.where(neg, -Xc, 0.0).sum(0) + smoothing * gmean) / (neg.sum(0) + smoothing)
        priors[c] = len(Xc) / len(X)
    return MultiExpModel(classes, phi, b_pos, b_neg, priors, alpha, smoothing)


def multiexp_predict(model: MultiExpModel, windows):
    return model.predict(windows)


# --------------------------------------------------------------------------
# linear SVM
# --------------------------------------------------------------------------


@dataclass
class SvmModel:
    """One-vs-rest linear SVM on standardized features (a single row for two classes)."""

    classes: list
    weights: np.ndarray  # (R, d)
    bias: np.ndarray  # (R,)
    mean: np.ndarray
    scale: np.ndarray
    C: float = 1.0
    mode: str = "abs"
    include_counts: bool = False
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def decision(self, vector) -> np.ndarray:
        z = (np.asarray(vector, dtype=np.float64) - self.mean) / self.scale
        return self.weights @ z + self.bias

    def predict(self, vector):
        d = self.decision(vector)
        if len(self.classes) == 2:
            return self.classes[1] if d[0] > 0 else self.classes[0]
        return self.classes[int(np.argmax(d))]


def _pegasos(Z, t, lam, epochs, rng):
    """Averaged stochastic subgradient on ``lam/2 |w|^2 + mean hinge`` (bias as a feature)."""
    N, d = Z.shape
    Za = np.hstack([Z, np.ones((N, 1))])
    w = np.zeros(d + 1)
    avg = np.zeros(d + 1)
    k = 0
    history = []
    for _ in range(epochs):
        for i in rng.permutation(N):
            k += 1
            eta = 1.0 / (lam * (k + 1))
            margin = t[i] * (Za[i] @ w)
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += eta * t[i] * Za[i]
            avg += (w - avg) / k
        hinge = np.maximum(0.0, 1.0 - t * (Za @ avg)).mean()
        history.append(0.5 * lam * float(avg @ avg) + float(hinge))
    return avg[:d], avg[d], history


def svm_fit(samples, C: float = 1.0, epochs: int = 30, seed=0, mode: str = "abs",
            include_counts: bool = False) -> SvmModel:
    """Hinge loss plus L2 penalty with ``lambda = 1 / (C N)``, features standardized first."""
    if not C > 0:
        raise InvalidArgument("C must be positive")
    X, y = _stack(samples)
    classes = _classes(y)
    if len(classes) < 2:
        raise InvalidArgument("SVM needs at least two classes")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    Z = (X - mean) / scale
    lam = 1.0 / (C * len(X))
    rng = np.random.default_rng(seed)
    targets = [classes[1]] if len(classes) == 2 else classes
    W = np.zeros((len(targets), X.shape[1]))
    B = np.zeros(len(targets))
    history = []
    for r, pos in enumerate(targets):
        t = np.array([1.0 if v == pos else -1.0 for v in y])
        W[r], B[r], h = _pegasos(Z, t, lam, epochs, rng)
        history.append(h)
    return SvmModel(classes, W, B, mean, scale, C, mode, include_counts, history)


def svm_predict(model: SvmModel, vector):
    return model.predict(vector)


# --------------------------------------------------------------------------
# model selection
# --------------------------------------------------------------------------


@dataclass
class CrossvalResult:
    best: dict
    scores: list  # (params, accuracy) in grid order


def crossval_select(grid, fit, train, dev) -> CrossvalResult:
    """Exhaustive grid search on dev-set accuracy; ties go to the earliest grid entry.

    Parameters
    ----------
    grid : list of dict
    fit : callable
        ``fit(params, train)`` returns a predictor ``f(x) -> label``.
    train : training data passed through to ``fit``
    dev : list of (x, label)
    """
    grid = list(grid)
    if not grid:
        raise InvalidArgument("empty parameter grid")
    if not dev:
        raise InvalidArgument("empty development set")
    scores = []
    best, best_acc = None, -1.0
    for params in grid:
        predict = fit(params, train)
        acc = float(np.mean([predict(x) == lab for x, lab in dev]))
        scores.append((params, acc))
        if acc > best_acc:
            best, best_acc = params, acc
    return CrossvalResult(best, scores)


def param_grid(**axes) -> list[dict]:
    """Cartesian product of keyword axes, first axis varying slowest."""
    grid = [{}]
    for key, vals in axes.items():
        grid = [dict(g, **{key: v}) for g in grid for v in vals]
    return grid


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------


def _write_array(lines, name, arr):
    arr = np.asarray(arr, dtype=np.float64)
    lines.append(f"[{name}] " + " ".join(str(d) for d in arr.shape))
    flat = arr.reshape(-1, arr.shape[-1]) if arr.ndim > 1 else arr[None, :]
    for row in flat:
        lines.append(" ".join(repr(float(v)) for v in row))


def save_model(path, model) -> None:
    """Plain-text ``key = value`` header followed by ``[name] shape`` array blocks."""
    lines = []
    if isinstance(model, GdaModel):
        lines += ["model = gda", f"classes = {json.dumps(model.classes)}",
                  f"cov_type = {model.cov_type}", f"ridge = {model.ridge!r}"]
        arrays = {"means": model.means, "covs": model.covs, "priors": model.priors}
    elif isinstance(model, MultiExpModel):
        lines += ["model = multiexp", f"classes = {json.dumps(model.classes)}",
                  f"alpha = {model.alpha!r}", f"smoothing = {model.smoothing!r}"]
        arrays = {"phi": model.phi, "b_pos": model.b_pos, "b_neg": model.b_neg,
                  "priors": model.priors}
    elif isinstance(model, SvmModel):
        lines += ["model = svm", f"classes = {json.dumps(model.classes)}", f"C = {model.C!r}",
                  f"mode = {model.mode}", f"include_counts = {model.include_counts}"]
        arrays = {"weights": model.weights, "bias": model.bias, "mean": model.mean,
                  "scale": model.scale}
    else:
        raise InvalidArgument(f"cannot save {type(model).__name__}")
    for key in sorted(model.meta):
        lines.append(f"meta.{key} = {model.meta[key]}")
    for name, arr in arrays.items():
        _write_array(lines, name, arr)
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path):
    text = Path(path).read_text().splitlines()
    head = {}
    arrays = {}
    i = 0
    try:
        while i < len(text):
            line = text[i].strip()
            i += 1
            if not line:
                continue
            if line.startswith("["):
                name, shape_s = line[1:].split("]", 1)
                shape = tuple(int(v) for v in shape_s.split())
                rows = int(np.prod(shape[:-1])) if len(shape) > 1 else 1
                vals = [float(v) for r in range(rows) for v in text[i + r].split()]
                i += rows
                arrays[name] = np.array(vals).reshape(shape)
            else:
                key, val = (part.strip() for part in line.split("=", 1))
                head[key] = val
        kind = head["model"]
        classes = json.loads(head["classes"])
        meta = {k[5:]: v for k, v in head.items() if k.startswith("meta.")}
        if kind == "gda":
            return GdaModel(classes, arrays["means"], arrays["covs"], arrays["priors"],
                            head["cov_type"], float(head["ridge"]), meta)
        if kind == "multiexp":
            return MultiExpModel(classes, arrays["phi"], arrays["b_pos"], arrays["b_neg"],
                                 arrays["priors"], float(head["alpha"]), float(head["smoothing"]),
                                 meta)
        if kind == "svm":
            return SvmModel(classes, arrays["weights"], arrays["bias"], arrays["mean"],
                            arrays["scale"], float(head["C"]), head["mode"],
                            head["include_counts"] == "True", meta=meta)
    except (KeyError, ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed model file ({exc})") from None
    raise FormatError(f"{path}: unknown model type {head.get('model')!r}")


def read_manifest(path) -> list[tuple[Path, str]]:
    """CSV manifest with header ``path,label``; relative paths resolve against the manifest."""
    base = Path(path).parent
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and not {"path", "label"} <= set(rows[0]):
        raise FormatError(f"{path}: manifest needs 'path' and 'label' columns")
    return [((base / r["path"]) if not Path(r["path"]).is_absolute() else Path(r["path"]),
             r["label"]) for r in rows]


def write_manifest(path, entries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label"])
        for p, lab in entries:
            w.writerow([str(p), lab])
