"""Per-input coefficient encoding for a list of signals."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from ..errors import InvalidArgument
from ..model import SparseCoeffs, as_bases
from ..signal import as_samples
from .feature_sign import FsConfig, fs_exact, fs_window

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BatchResult:
    coeffs: list
    all_converged: bool

    @property
    def failed(self) -> list[int]:
        return [i for i, c in enumerate(self.coeffs) if not c.converged]


def encode_one(x, bases, beta: float, cfg: FsConfig | None = None, warm=None,
               window_threshold: int | None = None, numpasses: int | None = None) -> SparseCoeffs:
    """``fs_exact`` for short inputs, ``fs_window`` once ``p`` exceeds ``window_threshold``."""
    data = as_samples(x)
    if window_threshold is not None and data.shape[1] > window_threshold:
        return fs_window(data, bases, beta, numpasses=numpasses, cfg=cfg, warm=warm)
    return fs_exact(data, bases, beta, cfg=cfg, warm=warm)


def encode_batch(inputs, bases, beta: float, cfg: FsConfig | None = None, warm=None,
                 window_threshold: int | None = None, numpasses: int | None = None,
                 workers: int = 1) -> BatchResult:
    """Solve the coefficient problem independently for every input.

    Parameters
    ----------
    inputs : list of Signal or arrays
    warm : list of SparseCoeffs or None, optional
        Per-input warm starts.
    window_threshold : int, optional
        Inputs longer than this use ``fs_window``; ``numpasses=None`` runs
        it to the KKT tolerance so the result stays exact.
    workers : int
        Thread count. Each input is solved by a single-threaded,
        deterministic solver and results are merged by input index, so the
        output does not depend on scheduling.
    """
    a = as_bases(bases)
    inputs = list(inputs)
    warm = [None] * len(inputs) if warm is None else list(warm)
    if len(warm) != len(inputs):
        raise InvalidArgument("need one warm start per input")
    if workers < 1:
        raise InvalidArgument("workers must be >= 1")

    def job(i):
        return encode_one(inputs[i], a, beta, cfg, warm[i], window_threshold, numpasses)

    if workers == 1 or len(inputs) <= 1:
        coeffs = [job(i) for i in range(len(inputs))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            coeffs = list(pool.map(job, range(len(inputs))))
    ok = all(c.converged for c in coeffs)
    if not ok:
        log.warning("%d of %d inputs did not reach the KKT tolerance",
                    sum(not c.converged for c in coeffs), len(coeffs))
    return BatchResult(coeffs, ok)
