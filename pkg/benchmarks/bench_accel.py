"""Compare the numba kernels with the pure-numpy fallback.

Usage: python3 benchmarks/bench_accel.py [--n 600] [--repeat 3] [--cv]

Kernel timings call both implementations directly in one process. With
``--cv`` a full synthetic cross-validation run is also timed in two
subprocesses, one with FACEINTERACT_NO_NUMBA=1.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from faceinteract import _accel
from faceinteract.learn import SvmParams, kernel_matrix

CV_SNIPPET = """
import time
from faceinteract import _accel
from faceinteract.evaluation import EvalConfig, run_cv
from faceinteract.facedesc import extract
from faceinteract.synth import default_specs, generate
m = generate(default_specs(flip_prob=0.3), {per_class}, seed=0)
X = extract(m.records)["facedesc"]
t0 = time.perf_counter()
rep = run_cv(m, {{"facedesc": X}}, EvalConfig())
print(_accel.USE_NUMBA, time.perf_counter() - t0, rep.map("facedesc"))
"""


def best_of(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_rows(n, repeat):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(n, 31))
    y = np.where(X[:, 0] * X[:, 1] > 0, 1.0, -1.0)
    K = kernel_matrix(X, X, SvmParams(gamma=0.125))
    rank = rng.permutation(n).astype(np.int64)
    coef = rng.normal(size=n)
    cases = {
        "sqdist": (lambda: _accel.sqdist_numba(X, X), lambda: _accel.sqdist_numpy(X, X)),
        "dot": (lambda: _accel.dot_numba(X, X), lambda: _accel.dot_numpy(X, X)),
        "smo": (lambda: _accel.smo_numba(K, y, 10.0, 1e-3, 10**6, rank),
                lambda: _accel.smo_numpy(K, y, 10.0, 1e-3, 10**6, rank)),
        "expand": (lambda: _accel.expand_numba(K, coef), lambda: _accel.expand_numpy(K, coef)),
    }
    for name, (fast, slow) in cases.items():
        a, b = best_of(fast, repeat), best_of(slow, repeat)
        yield name, a, b


def cv_rows(per_class):
    for disabled in ("0", "1"):
        env = {**os.environ, "FACEINTERACT_NO_NUMBA": disabled}
        out = subprocess.run([sys.executable, "-c", CV_SNIPPET.format(per_class=per_class)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        yield out[0] == "True", float(out[1]), float(out[2])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=600, help="training set size for kernel timings")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--cv", action="store_true", help="also time a cross-validation run per path")
    ap.add_argument("--per-class", type=int, default=60)
    args = ap.parse_args()
    if not _accel.HAS_NUMBA:
        sys.exit("numba is not installed; nothing to compare")
    print(f"{'kernel':<8}{'numba s':>12}{'numpy s':>12}{'speedup':>10}")
    for name, a, b in kernel_rows(args.n, args.repeat):
        print(f"{name:<8}{a:>12.4f}{b:>12.4f}{b / a:>10.1f}")
    if args.cv:
        print(f"\n{'path':<8}{'cv s':>12}{'mAP':>10}")
        for numba_on, secs, score in cv_rows(args.per_class):
            print(f"{'numba' if numba_on else 'numpy':<8}{secs:>12.2f}{score:>10.4f}")


if __name__ == "__main__":
    main()
