"""Compare the compiled and numpy power-mean kernels, and one full p-solve per backend.

Run with ``python benchmarks/bench_kernels.py``. The solve comparison spawns a
subprocess per backend because the backend is fixed at import time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from linfeig import _kernels_py

try:
    from linfeig import _kernels as _compiled
except ImportError:
    _compiled = None

SOLVE_SNIPPET = """
import time
from linfeig import BACKEND
from linfeig.geometry import DomainSpec, build_grid
from linfeig.discretization import Discretization
from linfeig.densities import power_f, eta_power_g
from linfeig.psolver import initial_bubble, solve_p
d = Discretization(build_grid(DomainSpec.interval(0, 1), {res}), "hinged")
f, g = power_f(2), eta_power_g(2)
u = initial_bubble(d)
t = time.perf_counter()
for p in (4, 8, 16, 32, 64):
    r = solve_p(f, g, u, p, multiplier=None)
    u = r.u
print(BACKEND, time.perf_counter() - t, repr(r.Lambda_p))
"""


def bench_kernels(sizes, p, repeat):
    rng = np.random.default_rng(0)
    print(f"{'nodes':>8} {'kernel':>18} {'python [us]':>12} {'cython [us]':>12} {'speedup':>8}")
    for n in sizes:
        v = rng.standard_normal(n)
        w = rng.uniform(0.5, 1.5, n)
        for name, args in (("factored_power", (v, w, p)), ("power_sum", (v, w, p)),
                           ("log_power_weights", (v, 1.0, p))):
            tp = min(timeit.repeat(lambda: getattr(_kernels_py, name)(*args), number=20,
                                   repeat=repeat)) / 20 * 1e6
            if _compiled is None:
                print(f"{n:>8} {name:>18} {tp:>12.1f} {'n/a':>12} {'n/a':>8}")
                continue
            tc = min(timeit.repeat(lambda: getattr(_compiled, name)(*args), number=20,
                                   repeat=repeat)) / 20 * 1e6
            print(f"{n:>8} {name:>18} {tp:>12.1f} {tc:>12.1f} {tp / tc:>8.2f}")


def bench_solve(res):
    for backend in ("cython", "python"):
        env = dict(os.environ, LINFEIG_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", SOLVE_SNIPPET.format(res=res)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"solve p=4..64 on {res} nodes: backend={out[0]:>6} time={float(out[1]):.3f}s "
              f"Lambda_64={out[2]}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[401, 3721, 40000])
    ap.add_argument("--p", type=float, default=128.0)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--solve-resolution", type=int, default=401)
    args = ap.parse_args()
    bench_kernels(args.sizes, args.p, args.repeat)
    bench_solve(args.solve_resolution)


if __name__ == "__main__":
    main()
