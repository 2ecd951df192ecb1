"""Time the numba kernels against their pure-numpy twins.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--number 200]

Both variants are called directly, so the comparison runs in one process
regardless of ``IRSOPT_DISABLE_JIT``; that variable only switches the
dispatching wrappers used by the library (reported on the first line).
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from irsopt import _jit, kernels
from irsopt.neural import actor_widths, init_mlp


def _complex(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def _ca_case(rng, n, m):
    c = _complex(rng, m, n)
    u = np.exp(-1j * rng.uniform(0, 2 * np.pi, m))
    h = _complex(rng, n) + c.conj().T @ u
    objs = np.empty(m)

    def run(fn):
        # sweeps mutate h and u; work on copies so every call sees the same input
        return lambda: fn(c, h.copy(), u.copy(), objs)

    return run


def _grid_case(rng, n, m, levels):
    c = _complex(rng, m, n)
    h_bu = _complex(rng, n)
    phasors = np.exp(-1j * 2 * np.pi * np.arange(levels) / levels)
    return lambda fn: (lambda: fn(c, h_bu, phasors))


def _mlp_case(rng, m):
    p = init_mlp(rng, actor_widths(m), "scaled-phase")
    x = rng.uniform(-1, 1, m + 1)
    args = (x, p.weights[0], p.biases[0], p.ln_gains[0], p.ln_biases[0],
            p.weights[1], p.biases[1], p.ln_gains[1], p.ln_biases[1],
            p.weights[2], p.biases[2])
    return lambda fn: (lambda: fn(*args, True))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=200)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)

    cases = [
        ("ca_sweep N=10 M=50", _ca_case(rng, 10, 50), kernels.ca_sweep_numba, kernels.ca_sweep_numpy),
        ("ca_sweep N=10 M=256", _ca_case(rng, 10, 256), kernels.ca_sweep_numba, kernels.ca_sweep_numpy),
        ("grid_search N=10 M=3 L=16", _grid_case(rng, 10, 3, 16),
         kernels.grid_search_numba, kernels.grid_search_numpy),
        ("mlp3_forward M=50", _mlp_case(rng, 50), kernels.mlp3_forward_numba, kernels.mlp3_forward_numpy),
        ("mlp3_forward M=256", _mlp_case(rng, 256), kernels.mlp3_forward_numba, kernels.mlp3_forward_numpy),
    ]
    print(f"numba active: {_jit.USE_NUMBA}  (repeat={args.repeat}, number={args.number})")
    print(f"{'kernel':<28}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for name, make, fast, slow in cases:
        row = []
        for fn in (fast, slow):
            call = make(fn)
            call()  # compile / warm caches
            best = min(timeit.repeat(call, repeat=args.repeat, number=args.number))
            row.append(1e6 * best / args.number)
        print(f"{name:<28}{row[0]:>12.2f}{row[1]:>12.2f}{row[1] / row[0]:>9.1f}x")


if __name__ == "__main__":
    main()
