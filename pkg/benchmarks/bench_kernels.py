"""Compare the compiled and pure-Python kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 20] [--nodes 4096] [--N 32]

Times the damping resolvent, the history shift and a full solver step for
each available backend and prints one row per (kernel, backend).
"""

import argparse
import timeit

import numpy as np

from memwave import kernels
from memwave.lab import reference_scenario
from memwave.solver import StepperConfig, init_state, step


def _resolvent(mod, r):
    return lambda: mod.resolve_power(r, 0.25, 3.0, 1e-13, 100)


def _shift(mod, W, du, c, lam, q, S):
    return lambda: mod.shift_add(W, du, c, lam, q, S)


def _step(backend, N):
    sc = reference_scenario({"basis.N": N})
    cfg = StepperConfig(sc.stepper.dt, backend=backend)
    state = init_state(sc.past, sc.model, cfg.dt)
    return lambda: step(state, cfg, sc.model)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20, help="timed calls per kernel")
    ap.add_argument("--nodes", type=int, default=4096, help="resolvent problem size")
    ap.add_argument("--N", type=int, default=32, help="basis size")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    r = rng.standard_normal(args.nodes) * 5.0
    sc = reference_scenario({"basis.N": args.N})
    w = init_state(sc.past, sc.model, sc.stepper.dt).w
    M, N = w.W.shape
    du = rng.standard_normal(N) * 1e-3
    lam = sc.model.basis.eigenvalues

    backends = ["python"] + (["compiled"] if kernels.BACKEND == "compiled" else [])
    results = {}
    for b in backends:
        mod = kernels.get(b)
        W = w.W.copy()
        q, S = np.empty(M), np.empty(N)
        cases = {
            f"resolve_power ({args.nodes} nodes)": _resolvent(mod, r),
            f"shift_add ({M}x{N})": _shift(mod, W, du, w.omega, lam, q, S),
            f"solver step (N={args.N})": _step(b, args.N),
        }
        for name, fn in cases.items():
            fn()  # warm up
            t = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            results.setdefault(name, {})[b] = t

    print(f"{'kernel':34s}" + "".join(f"{b:>14s}" for b in backends) + "    speedup")
    for name, row in results.items():
        line = f"{name:34s}" + "".join(f"{row[b] * 1e6:12.1f}us" for b in backends)
        if "compiled" in row:
            line += f"   {row['python'] / row['compiled']:7.1f}x"
        print(line)
    if kernels.BACKEND != "compiled":
        print("compiled extension not built; only the python backend was timed")


if __name__ == "__main__":
    main()
