"""Compare the compiled and numpy kernel backends on SBM-shaped CSR graphs.

    python3 benchmarks/bench_kernels.py [--nodes 2000] [--dim 64] [--repeat 20]

Prints one row per kernel with the median time of each backend, the speedup
and the max abs difference between their outputs; exits 1 if they disagree
beyond 1e-12. A last row times one pretraining epoch under each backend.
"""

import argparse
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from graphmae import kernels
from graphmae.graph import FeatureSpec, generate_sbm


def _time(fn, repeat):
    fn()  # warm-up
    samples = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def _cases(g, dim, rng):
    adj = g.adjacency
    off, cols, vals = adj.row_offsets, adj.col_indices, adj.edge_values
    n, m = adj.n, adj.num_arcs
    h = rng.normal(size=(n, dim))
    logits = rng.normal(size=(m, 4))
    a, b = rng.normal(size=(n, 4)), rng.normal(size=(n, 4))
    return {
        "spmm": lambda k: k.spmm(off, cols, vals, h),
        "spmm_t": lambda k: k.spmm_t(off, cols, vals, h, n),
        "edge_dot": lambda k: k.edge_dot(off, cols, a, b),
        "segment_softmax": lambda k: k.segment_softmax(off, logits),
        "segment_softmax_backward": lambda k: k.segment_softmax_backward(
            off, k.segment_softmax(off, logits), logits),
        "partial_shuffle": lambda k: _shuffle(k, n, rng),
    }


def _shuffle(k, n, rng):
    perm = np.arange(n, dtype=np.int64)
    k.partial_shuffle(perm, np.random.default_rng(0).integers(np.arange(n // 2), n))
    return perm


EPOCH_SNIPPET = """
import time
from graphmae.graph import FeatureSpec, generate_sbm
from graphmae.training import OptimConfig, RunConfig, pretrain
g = generate_sbm([{half}, {half}], {p_in}, {p_out}, FeatureSpec(dim={dim}), seed=0)
run = RunConfig(optim=OptimConfig(max_epoch=5), hidden_size=64)
pretrain(g, RunConfig(optim=OptimConfig(max_epoch=1), hidden_size=64))
t = time.perf_counter(); pretrain(g, run); print((time.perf_counter() - t) / 5)
"""


def _epoch_time(backend, half, p_in, p_out, dim):
    code = EPOCH_SNIPPET.format(half=half, p_in=p_in, p_out=p_out, dim=dim)
    out = subprocess.run([sys.executable, "-c", code], env={**os.environ, "GRAPHMAE_BACKEND": backend},
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=2000)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    found = kernels.backends()
    if "cython" not in found:
        print("compiled backend not built; only the numpy fallback is available")
        return 0
    py, cy = found["python"], found["cython"]
    half = args.nodes // 2
    p_in, p_out = 10 / half, 1 / half
    g = generate_sbm([half, half], p_in, p_out, FeatureSpec(dim=8), seed=0)
    print(f"graph: n={g.n} arcs={g.adjacency.num_arcs} dim={args.dim} repeat={args.repeat}")
    print(f"{'kernel':<26}{'python ms':>11}{'cython ms':>11}{'speedup':>9}{'max diff':>11}")
    rng = np.random.default_rng(0)
    worst = 0.0
    for name, fn in _cases(g, args.dim, rng).items():
        diff = float(np.max(np.abs(np.asarray(fn(py), dtype=float) - np.asarray(fn(cy), dtype=float)), initial=0.0))
        worst = max(worst, diff)
        tp, tc = _time(lambda: fn(py), args.repeat), _time(lambda: fn(cy), args.repeat)
        print(f"{name:<26}{1e3 * tp:>11.3f}{1e3 * tc:>11.3f}{tp / tc:>9.2f}{diff:>11.1e}")
    ep = _epoch_time("python", half, p_in, p_out, args.dim)
    ec = _epoch_time("cython", half, p_in, p_out, args.dim)
    print(f"{'pretrain epoch (GAT/GAT)':<26}{1e3 * ep:>11.3f}{1e3 * ec:>11.3f}{ep / ec:>9.2f}{'-':>11}")
    return 1 if worst > 1e-12 else 0


if __name__ == "__main__":
    sys.exit(main())
