"""Time the selective-scan kernels: compiled extension against the numpy fallback.

    python benchmarks/bench_scan.py                 # default-config shapes
    python benchmarks/bench_scan.py --batch 8 --repeat 3
"""
import argparse
import timeit

import numpy as np

from mambacapsule import kernels


def make_inputs(batch, length, dim, n_state, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.5, 1.0, (batch, length, dim, n_state))
    u = rng.standard_normal((batch, length, dim, n_state))
    c = rng.standard_normal((batch, length, n_state))
    dy = rng.standard_normal((batch, length, dim))
    return a, u, c, dy


def time_backend(backend, a, u, c, dy, repeat):
    _, h = backend.scan_forward(a, u, c)
    fwd = min(timeit.repeat(lambda: backend.scan_forward(a, u, c), number=1, repeat=repeat))
    bwd = min(timeit.repeat(lambda: backend.scan_backward(a, c, h, dy), number=1, repeat=repeat))
    return fwd, bwd


def run(batch=32, length=187, dim=32, n_state=8, repeat=5):
    a, u, c, dy = make_inputs(batch, length, dim, n_state)
    rows = [("numpy", *time_backend(kernels.python_backend, a, u, c, dy, repeat))]
    if kernels.compiled_backend is not None:
        rows.append(("cython", *time_backend(kernels.compiled_backend, a, u, c, dy, repeat)))
        y0, _ = kernels.python_backend.scan_forward(a, u, c)
        y1, _ = kernels.compiled_backend.scan_forward(a, u, c)
        assert np.allclose(y0, y1, rtol=0, atol=1e-12)
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--length", type=int, default=187)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--n-state", type=int, default=8)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    rows = run(args.batch, args.length, args.dim, args.n_state, args.repeat)
    print(f"shape B={args.batch} L={args.length} D={args.dim} N={args.n_state}, best of {args.repeat}; "
          f"active backend: {kernels.BACKEND}")
    print(f"{'backend':8s} {'forward ms':>11s} {'backward ms':>12s}")
    for name, fwd, bwd in rows:
        print(f"{name:8s} {fwd * 1e3:11.2f} {bwd * 1e3:12.2f}")
    if len(rows) == 2:
        print(f"speedup  {rows[0][1] / rows[1][1]:11.1f}x {rows[0][2] / rows[1][2]:11.1f}x")
    if kernels.compiled_backend is None:
        print("compiled extension not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
