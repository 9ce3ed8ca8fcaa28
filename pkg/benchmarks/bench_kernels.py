"""Time the numba kernels against their numpy fallbacks.

Usage::

    python benchmarks/bench_kernels.py [--repeat 20] [--end-to-end]

Each kernel is timed on the same inputs in both versions (the numba version
is warmed up first so compilation is excluded). ``--end-to-end`` also times a
full ``fs_exact`` solve in two subprocesses, one with ``SISC_NO_NUMBA=1``.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from sisc import _accel
from sisc.model import basis_lags


def _best(fn, args, repeat):
    fn(*[a.copy() if isinstance(a, np.ndarray) else a for a in args])
    times = []
    for _ in range(repeat):
        fresh = [a.copy() if isinstance(a, np.ndarray) else a for a in args]
        t0 = time.perf_counter()
        fn(*fresh)
        times.append(time.perf_counter() - t0)
    return min(times)


def _cases(rng):
    n, F, q, p = 16, 1, 64, 2048
    T = p - q + 1
    bases = rng.standard_normal((n, F, q))
    lags = basis_lags(bases)
    x = rng.standard_normal((F, p))
    m = 400
    flat = rng.choice(n * T, size=m, replace=False)
    jj, tt = (v.astype(np.int64) for v in np.divmod(flat, T))
    G = _accel.gram_numpy(lags, jj, tt, q) + 1e-3 * np.eye(m)
    L = np.zeros((m + 1, m + 1))
    L[:m, :m] = np.linalg.cholesky(G)
    gnew = rng.standard_normal(m) * 0.01
    corr = rng.standard_normal((n, T))
    return {
        "direct_conv": (rng.standard_normal(p), rng.standard_normal(q)),
        "gram": (lags, jj, tt, q),
        "correlate_at": (x, bases, jj, tt),
        "add_atoms": (np.zeros((F, p)), bases, jj, tt, rng.standard_normal(m)),
        "mp_update": (corr, lags, 3, T // 2, 0.7, q),
        "chol_append": (L, m, gnew, float(G[0, 0]) + 1.0, 1e-12),
        "chol_delete": (L, m, 5),
        "chol_solve": (L, m, rng.standard_normal(m)),
    }


_E2E = """
import time, numpy as np
from sisc import _accel
from sisc.bench import make_coeff_instance
from sisc.solvers.feature_sign import fs_exact
inst = make_coeff_instance(p=1024, n=16, q=32, beta=0.5, density=0.02, seed=0)
fs_exact(inst.x[:, :256], inst.bases, inst.beta)  # warm-up / compile
t0 = time.perf_counter()
s = fs_exact(inst.x, inst.bases, inst.beta)
print(_accel.backend(), time.perf_counter() - t0, s.nnz)
"""


def end_to_end():
    for flag in ("0", "1"):
        env = dict(os.environ, SISC_NO_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", _E2E], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"fs_exact end-to-end  {out[0]:>6}: {float(out[1]) * 1e3:9.1f} ms  (nnz {out[2]})")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':<14}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, case in cases.items():
        t_nb = _best(getattr(_accel, f"{name}_numba"), case, args.repeat)
        t_np = _best(getattr(_accel, f"{name}_numpy"), case, args.repeat)
        print(f"{name:<14}{t_nb * 1e3:12.4f}{t_np * 1e3:12.4f}{t_np / t_nb:10.1f}x")
    if args.end_to_end:
        end_to_end()
    return 0


if __name__ == "__main__":
    sys.exit(main())
