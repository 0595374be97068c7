"""Compare the numba and numpy segment kernels, then one full training step
under each backend.

    python benchmarks/bench_kernels.py [--repeats 50] [--skip-step]

The backend is fixed at import time by EGATSYM_DISABLE_NUMBA, so the
training-step comparison runs each backend in a fresh interpreter.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from egatsym import _kernels as K

STEP_SNIPPET = """
import timeit
from egatsym import _kernels
from egatsym.synth import generate_dataset
from egatsym.train import load_manifest, split_dataset, train
from egatsym.model import ModelConfig
from egatsym.train import TrainConfig
import tempfile
with tempfile.TemporaryDirectory() as d:
    generate_dataset(7, 12, d)
    tr, _ = split_dataset(load_manifest(d + "/manifest.json"), 0.75, 7)
    train(tr, ModelConfig(), TrainConfig(epochs=1))  # warm-up / JIT compile
    res = train(tr, ModelConfig(), TrainConfig(epochs=3))
    print(_kernels.BACKEND, res.seconds / res.steps)
"""


def _problem(n_nodes: int, degree: int, width: int, rng: np.random.Generator):
    seg = np.sort(rng.integers(0, n_nodes, size=n_nodes * degree))
    return rng.standard_normal((seg.size, width)), seg


def bench_kernels(repeats: int) -> None:
    if not K.HAVE_NUMBA:
        print("numba unavailable; only the numpy kernels exist")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'edges x cols':>16}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}")
    for n_nodes, degree, width in [(800, 5, 5), (800, 5, 160), (5000, 8, 5), (5000, 8, 160)]:
        x, seg = _problem(n_nodes, degree, width, rng)
        g = rng.standard_normal(x.shape)
        s = K.segment_softmax_numpy(x, seg, n_nodes)
        cases = {
            "segment_sum": (lambda: K.segment_sum_numpy(x, seg, n_nodes),
                            lambda: K.segment_sum_numba(x, seg, n_nodes)),
            "segment_softmax": (lambda: K.segment_softmax_numpy(x, seg, n_nodes),
                                lambda: K.segment_softmax_numba(x, seg, n_nodes)),
            "segment_softmax_grad": (lambda: K.segment_softmax_grad_numpy(s, g, seg, n_nodes),
                                     lambda: K.segment_softmax_grad_numba(s, g, seg, n_nodes)),
        }
        for name, (f_np, f_nb) in cases.items():
            np.testing.assert_allclose(f_np(), f_nb(), rtol=1e-12, atol=1e-12)
            t_np = min(timeit.repeat(f_np, number=1, repeat=repeats)) * 1e3
            t_nb = min(timeit.repeat(f_nb, number=1, repeat=repeats)) * 1e3
            print(f"{name:<22}{f'{x.shape[0]} x {width}':>16}{t_np:>11.3f}{t_nb:>11.3f}{t_np / t_nb:>8.1f}x")


def bench_step() -> None:
    print("\nseconds per training step (default model, 9 training circuits):")
    for flag in ("1", "0"):
        env = dict(os.environ, EGATSYM_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", STEP_SNIPPET], env=env, capture_output=True,
                             text=True, check=True)
        backend, sec = out.stdout.split()
        print(f"  {backend:<6} {float(sec):.4f}")


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--skip-step", action="store_true")
    args = ap.parse_args()
    bench_kernels(args.repeats)
    if not args.skip_step:
        bench_step()


if __name__ == "__main__":
    main()
