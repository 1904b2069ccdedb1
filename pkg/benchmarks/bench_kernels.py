"""Benchmark the numpy reference kernels against the compiled ones.

Run:  python3 benchmarks/bench_kernels.py [--end-to-end]

The per-kernel table drives the default dispatch in uplm.kernels: the
compiled softmax and scatter-add win at every size, the compiled LSTM
cell only below ~2k gate pre-activations (numpy's SIMD transcendentals
win on large batches). --end-to-end times a full training step in
subprocesses with UPLM_KERNELS forced to each backend.
"""

import argparse
import subprocess
import sys
import time

import numpy as np

from uplm.kernels import numpy_ref

try:
    from uplm.kernels import _speedups
except ImportError:
    _speedups = None


def timeit(fn, *args, repeat=200):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat * 1e6


def bench_cell(mod, b, h):
    rng = np.random.default_rng(0)
    z = rng.standard_normal((b, 4 * h)) * 3
    c_prev = rng.standard_normal((b, h))
    h_out = np.empty((b, h))
    c_out = np.empty((b, h))
    fwd = timeit(mod.lstm_cell_forward, z, c_prev, h_out, c_out)
    dz = np.empty((b, 4 * h))
    dcp = np.empty((b, h))
    dh = rng.standard_normal((b, h))
    dc = rng.standard_normal((b, h))
    bwd = timeit(mod.lstm_cell_backward, z, c_prev, c_out, dh, dc, dz, dcp)
    return fwd, bwd


def bench_softmax(mod, n, v):
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((n, v))
    targets = rng.integers(0, v, size=n).astype(np.int64)
    nll = np.empty(n)
    fwd = timeit(mod.softmax_nll_forward, logits, targets, nll)
    d = np.empty((n, v))
    scale = rng.random(n)
    bwd = timeit(mod.softmax_nll_backward, logits, targets, scale, d)
    return fwd, bwd


def bench_scatter(mod, n, v, e):
    rng = np.random.default_rng(0)
    table = np.zeros((v, e))
    idx = rng.integers(0, v, size=n).astype(np.int64)
    rows = rng.standard_normal((n, e))
    return timeit(mod.scatter_add_rows, table, idx, rows, repeat=50)


def kernel_table():
    if _speedups is None:
        print("compiled kernels not built; install with `pip install -e .`")
        return
    print(f"{'kernel':<34}{'numpy us':>12}{'cython us':>12}{'speedup':>9}")
    rows = []
    for b, h in ((1, 64), (16, 64), (128, 64), (128, 256)):
        np_f, np_b = bench_cell(numpy_ref, b, h)
        cy_f, cy_b = bench_cell(_speedups, b, h)
        rows.append((f"lstm_cell_forward  B={b:<4} H={h}", np_f, cy_f))
        rows.append((f"lstm_cell_backward B={b:<4} H={h}", np_b, cy_b))
    for n, v in ((128, 32), (5120, 32), (5120, 256)):
        np_f, np_b = bench_softmax(numpy_ref, n, v)
        cy_f, cy_b = bench_softmax(_speedups, n, v)
        rows.append((f"softmax_nll_fwd    N={n:<5} V={v}", np_f, cy_f))
        rows.append((f"softmax_nll_bwd    N={n:<5} V={v}", np_b, cy_b))
    for n, v, e in ((5120, 32, 64),):
        rows.append(
            (f"scatter_add_rows   N={n} E={e}", bench_scatter(numpy_ref, n, v, e),
             bench_scatter(_speedups, n, v, e))
        )
    for name, np_t, cy_t in rows:
        print(f"{name:<34}{np_t:>12.1f}{cy_t:>12.1f}{np_t / cy_t:>9.2f}x")


STEP_SNIPPET = """
import time, numpy as np
import uplm.autograd as ag
import uplm.kernels as K
from uplm.autograd import Tape
from uplm.model import ArchConfig, DropoutConfig, init_parameters, sequence_nll, train_plan
from uplm.rng import RngHub

arch = ArchConfig(vocab_size=32, embed_dim=32, hidden_dim=64, num_layers=2)
mp = init_parameters(arch, 0)
rng = np.random.default_rng(0)
tokens = rng.integers(0, 32, size=(128, 41)).astype(np.int64); tokens[:, 0] = 0
mask = np.ones((128, 40))
plan = train_plan(RngHub(0).stream("d"), arch, 128, DropoutConfig())
def step():
    tape = Tape()
    loss, _, _ = sequence_nll(tape, tape.var(mp.flat), arch, tokens, mask, 40, plan)
    tape.backward(ag.mul_const(tape, loss, 1.0 / mask.sum()))
step()
t0 = time.perf_counter()
for _ in range(10):
    step()
print(f"{K.BACKEND}: {(time.perf_counter() - t0) / 10 * 1000:.1f} ms per training step")
"""


def end_to_end():
    import os

    for backend in ("python", "cython", ""):
        env = dict(os.environ)
        if backend:
            env["UPLM_KERNELS"] = backend
        else:
            env.pop("UPLM_KERNELS", None)
        label = backend or "mixed (default)"
        proc = subprocess.run(
            [sys.executable, "-c", STEP_SNIPPET], env=env, capture_output=True, text=True
        )
        out = proc.stdout.strip() or proc.stderr.strip()
        print(f"{label:<18} {out}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--end-to-end", action="store_true")
    args = parser.parse_args()
    kernel_table()
    if args.end_to_end:
        print()
        end_to_end()
