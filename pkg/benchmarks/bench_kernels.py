"""Time the numba kernels against the numpy fallback, plus one training step.

    python benchmarks/bench_kernels.py [--repeat 20]

Shapes mirror a default batch: 32 graphs x 32 ROIs, k=10, 4 heads, d=64.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from brainhgcn import _kernels as kn


def problem(rng, graphs=32, n=32, heads=4, d=65, degree=21):
    N = graphs * n
    row = np.repeat(np.arange(N), degree)
    col = (row // n) * n + rng.integers(0, n, len(row))
    order = np.lexsort((col, row))
    return {
        "a": rng.normal(size=(N, 1, d)),
        "b": rng.normal(size=(N, heads, d)),
        "c": rng.normal(size=(len(row), heads)),
        "x": rng.normal(size=(len(row), heads)),
        "row": row[order].astype(np.int64),
        "col": col[order].astype(np.int64),
        "sign": np.r_[-1.0, np.ones(d - 1)],
        "N": N,
    }


def best_of(fn, repeat):
    fn()  # warm-up (compiles the numba path)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_table(repeat):
    p = problem(np.random.default_rng(0))
    calls = {
        "edge_inner": lambda ks: ks.edge_inner(p["a"], p["b"], p["row"], p["col"], p["sign"]),
        "edge_scatter": lambda ks: ks.edge_scatter(p["c"], p["b"], p["row"], p["col"], p["N"]),
        "segment_sum": lambda ks: ks.segment_sum(p["x"], p["row"], p["N"]),
        "segment_max": lambda ks: ks.segment_max(p["x"], p["row"], p["N"]),
    }
    print(f"{'kernel':<14}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, call in calls.items():
        t_np = best_of(lambda: call(kn.numpy_kernels), repeat)
        t_nb = best_of(lambda: call(kn.numba_kernels), repeat)
        print(f"{name:<14}{1e3 * t_np:>10.2f}{1e3 * t_nb:>10.2f}{t_np / t_nb:>8.1f}x")


STEP = """
import time, numpy as np
from brainhgcn import autodiff as ad, model, synth, graph, _kernels
gs = [graph.graph_from_series(s) for s in synth.generate_dataset(synth.SynthSpec(n_subjects=16))]
cfg = model.ModelConfig(in_dim=64)
p = model.init_params(cfg, np.random.default_rng(0))
b = model.Batch(gs, cfg)
def step():
    with ad.Tape() as tape:
        loss = model.batch_loss(p, b, cfg)
    tape.backward(loss)
step()
best = min((lambda t0: (step(), time.perf_counter() - t0)[1])(time.perf_counter()) for _ in range(3))
print(f"{_kernels.backend_name()}: {1e3 * best:.0f} ms per 32-graph forward+backward")
"""


def step_timing():
    for flag in ("0", "1"):
        env = dict(os.environ, BRAINHGCN_DISABLE_NUMBA=flag)
        subprocess.run([sys.executable, "-c", STEP], env=env, check=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not kn.NUMBA_AVAILABLE:
        sys.exit("numba is not installed; nothing to compare")
    kernel_table(args.repeat)
    sys.stdout.flush()
    step_timing()


if __name__ == "__main__":
    main()
