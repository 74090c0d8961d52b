"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--trace]

``--trace`` also times one full trace of the default synthetic case under
each backend (in subprocesses, since the backend is fixed at import).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from gptrace import _kernels_py

try:
    from gptrace import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def workloads(rng):
    g = rng.random((500, 720))
    curves = 250 + 40 * rng.standard_normal((500, 720))
    weights = np.ones(720)
    kept = curves[:50]
    xs = np.broadcast_to(np.arange(720.0), kept.shape)
    ws = np.full(kept.shape, 1.0 / kept.size)
    cost = 1.0 - g + 1e-3
    cols = np.broadcast_to(np.arange(720.0), curves.shape)

    def deposit(mod):
        grid = np.zeros_like(g)
        mod.deposit(grid, xs, kept, ws, 1.0, 4.0)

    return {
        "bilinear (360k samples)": lambda mod: mod.bilinear(g, cols, curves),
        "score_curves (500 x 720)": lambda mod: mod.score_curves(g, curves, weights),
        "deposit (50 x 720 points)": deposit,
        "dijkstra (500 x 720 grid)": lambda mod: mod.dijkstra(cost, (250, 0), (250, 719)),
    }


def time_trace(pure: bool) -> float:
    env = dict(os.environ)
    if pure:
        env["GPTRACE_PURE_PYTHON"] = "1"
    code = (
        "import time; from gptrace.image import make_sinusoid_case; "
        "from gptrace.evaluation import run_case; from gptrace.tracer import TraceConfig; "
        "from gptrace import kernels; c = make_sinusoid_case(); "
        "j, t, _ = run_case(TraceConfig(), c); print(kernels.BACKEND, t, j)"
    )
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    backend, t, j = out.stdout.split()
    return float(t), float(j), backend


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--trace", action="store_true")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':<28} {'python (ms)':>12} {'cython (ms)':>12} {'speedup':>8}")
    for name, fn in workloads(rng).items():
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if _kernels_c is None:
            print(f"{name:<28} {t_py:12.2f} {'n/a':>12} {'':>8}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_kernels_c), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<28} {t_py:12.2f} {t_c:12.2f} {t_py / t_c:7.1f}x")

    if args.trace:
        for pure in (False, True):
            t, j, backend = time_trace(pure)
            print(f"full trace, {backend:<6} backend: {t:6.2f}s (jaccard {j:.4f})")


if __name__ == "__main__":
    main()
