"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5] [--train]

``--train`` also times a short training run in two subprocesses, one with
OPSURV_DISABLE_NUMBA=1, so the whole pipeline is compared.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from opsurv import kernels
from opsurv._accel import HAVE_NUMBA
from opsurv.quadrature import build_rule


def ranking_case(n=200, n_events=2, degree=8, seed=0):
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.05, 5.0, n)
    rule = build_rule(20)
    gram = kernels.gram_matrices(s, rule.nodes, rule.weights, degree)
    coeffs = rng.normal(size=(n, n_events, degree + 1))
    alphas = rng.dirichlet(np.ones(n_events), size=n)
    events = rng.integers(0, n_events + 1, n)
    return gram, coeffs, alphas, s, events, 1e-12


def cases():
    rng = np.random.default_rng(1)
    t = rng.uniform(-6, 6, 20 * 4000)          # 4000 records x 20 quadrature nodes
    rk = ranking_case()
    n = 1000
    risk = rng.random((n, n))
    times = rng.exponential(size=n)
    case = rng.random(n) < 0.7
    return [
        ("hermite_table  80k pts, J=8", "_hermite_table", (t, 8, True)),
        ("ranking loss+vjp  batch 200", "_ranking", rk),
        ("concordance  n=1000", "_concordance", (risk, times, case)),
    ]


def best_of(fn, args, repeat):
    number = 1
    while timeit.timeit(lambda: fn(*args), number=number) < 0.2:
        number *= 2
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def bench_kernels(repeat):
    print(f"{'kernel':32s} {'numpy':>12s} {'numba':>12s} {'speedup':>8s}")
    for label, stem, args in cases():
        t_np = best_of(getattr(kernels, stem + "_numpy"), args, repeat)
        if HAVE_NUMBA:
            jit = getattr(kernels, stem + "_numba")
            jit(*args)                          # compile outside the timing
            t_nb = best_of(jit, args, repeat)
            print(f"{label:32s} {t_np * 1e3:10.2f}ms {t_nb * 1e3:10.2f}ms {t_np / t_nb:7.1f}x")
        else:
            print(f"{label:32s} {t_np * 1e3:10.2f}ms {'n/a':>12s}")


TRAIN_SNIPPET = """
import time
from opsurv import BACKEND
from opsurv.data import generate_synthetic, split
from opsurv.model import ModelConfig
from opsurv.training import TrainConfig, train
data, _ = generate_synthetic(4000, seed=0)
ds = split(data, 0)
train(ds, ModelConfig(6, 2), TrainConfig(epochs=1))   # warm-up, includes JIT compile
t0 = time.perf_counter()
train(ds, ModelConfig(6, 2), TrainConfig(epochs=5))
print(BACKEND, time.perf_counter() - t0)
"""


def bench_training():
    for flag in ("0", "1"):
        env = dict(os.environ, OPSURV_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env, check=True,
                             capture_output=True, text=True).stdout.split()
        print(f"5 epochs, n=4000, backend {out[0]:6s}: {float(out[1]):.2f} s")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--train", action="store_true", help="also time a short training run")
    args = ap.parse_args()
    bench_kernels(args.repeat)
    if args.train:
        bench_training()


if __name__ == "__main__":
    main()
