#!/usr/bin/env python3
"""Time the numba kernels against their numpy twins.

Numba is warmed up first so compilation is excluded. Results are checked for
agreement before any timing is reported.

    python3 benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from volterra_mor import _accel, demo_system, kernels
from volterra_mor.norms import _midpoint_nodes, _resolvents


def best_of(func, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = func()
        times.append(time.perf_counter() - t0)
    return min(times), out


def compare(label, func, repeats, rtol):
    _accel.USE_NUMBA = True
    func()
    t_nb, v_nb = best_of(func, repeats)
    _accel.USE_NUMBA = False
    t_np, v_np = best_of(func, repeats)
    _accel.USE_NUMBA = True
    np.testing.assert_allclose(v_nb, v_np, rtol=rtol, atol=1e-14)
    print(f"{label:<34s} numba {t_nb * 1e3:9.2f} ms   numpy {t_np * 1e3:9.2f} ms   "
          f"speedup {t_np / t_nb:6.1f}x")


def chain_case(n, points, k):
    sys = demo_system(n, 0)
    omega, w = _midpoint_nodes(points, 1.0)
    kinv = _resolvents(sys.A, omega)
    ck = np.einsum("i,pij->pj", sys.c.astype(complex), kinv)
    return lambda: kernels.chain_energy(kinv, ck, sys.N, sys.b, w, k)


def rk4_case(n, steps):
    sys = demo_system(n, 0)
    t = np.linspace(0.0, 10.0, steps + 1)
    h = t[1] - t[0]
    u = 0.1 * np.exp(-t)
    um = 0.1 * np.exp(-(t[:-1] + 0.5 * h))
    return lambda: kernels.rk4_bilinear(sys.A, sys.N, sys.b, sys.c, u, um, h, np.zeros(n))[0]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    if not _accel.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"numba threads: {_accel.configure_threads()}")
    compare("chain_energy k=2 n=8 P=64", chain_case(8, 64, 2), args.repeats, 1e-11)
    compare("chain_energy k=3 n=8 P=48", chain_case(8, 48, 3), args.repeats, 1e-11)
    compare("chain_energy k=3 n=16 P=64", chain_case(16, 64, 3), 2, 1e-11)
    compare("rk4 n=8 steps=20000", rk4_case(8, 20000), args.repeats, 1e-12)
    compare("rk4 n=32 steps=20000", rk4_case(32, 20000), args.repeats, 1e-12)


if __name__ == "__main__":
    main()
