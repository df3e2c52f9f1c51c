"""Time the compiled and pure-numpy kernel back ends on the same workloads.

    python benchmarks/bench_kernels.py [--repeat 5] [--points 64]

Both back ends are importable in one process; ``FLOWSTAB_NUMBA`` only picks
the default, so the comparison here passes ``use_numba`` explicitly.
"""
import argparse
import time

import numpy as np

from flowstab import _kernels as K
from flowstab.fields import build_field

CASES = {
    "Y1 bounded n=2": {"family": "Y1", "n": 2, "alpha": [-2.0, -1.0],
                       "perturbation": {"kind": "Bounded", "gamma": 0.2, "coupled": True}},
    "Y2 component n=3": {"family": "Y2", "n": 3, "alpha": [0, 0, 0], "beta": [-1, -1.5, -2],
                         "m": [2, 2, 4], "perturbation": {"kind": "ComponentPower", "gamma": 0.1}},
    "X3 n=8": {"family": "X3", "n": 8, "alpha": [-1.0] * 8, "beta": [-0.5] * 8, "m": [2] * 8},
}


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def run(repeat=5, points=64, t_max=10.0):
    if not K._HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rows = []
    rng = np.random.Generator(np.random.Philox(7))
    ts = np.linspace(0.0, t_max, 101)
    for name, cfg in CASES.items():
        f = build_field(cfg, certify=False)
        Y0 = rng.uniform(-1.5, 1.5, size=(points, f.n))
        P = f.params

        def go(use):
            return K.integrate_catalog(Y0, ts, P, 1e-10, 1e-12, 0.0, 1e-14, np.inf, 10 ** 6,
                                       use_numba=use)

        t_c = time.perf_counter()
        ref = go(True)
        compile_s = time.perf_counter() - t_c
        alt = go(False)
        diff = float(np.max(np.abs(ref[0] - alt[0])))
        fast = _best(lambda: go(True), repeat)
        slow = _best(lambda: go(False), repeat)
        rows.append((name, compile_s, fast, slow, slow / fast, diff))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--points", type=int, default=64)
    args = ap.parse_args(argv)
    rows = run(args.repeat, args.points)
    print(f"{'case':20s} {'first call':>11s} {'numba':>10s} {'numpy':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, comp, fast, slow, sp, diff in rows:
        print(f"{name:20s} {comp:10.3f}s {fast:9.4f}s {slow:9.4f}s {sp:7.1f}x {diff:10.2e}")


if __name__ == "__main__":
    main()
