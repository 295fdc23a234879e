"""Compare compiled and pure-numpy kernel paths.

Each backend runs in a fresh interpreter, since the choice is fixed at import
time by JGL_DISABLE_NUMBA.  The numpy path executes the same loops in the
interpreter and is far slower, so its problem sizes are scaled down and the
report gives per-site (or per-element) cost.

    python3 benchmarks/bench_kernels.py [--scale 1.0]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
import jgl
from jgl.coeffstream import UpsilonParams, sample_upsilon
from jgl.transfer import run_trajectory, propagate
from jgl.spectral import truncate, eigensystem
from jgl.greens import greens_column_log
from jgl.dynamics import evolve_moments

scale = float(sys.argv[1])
st = sample_upsilon(UpsilonParams(0.6, 0.1, 1.0, 1.0), seed=7)

def timed(fn, units):
    fn()  # warm-up / compile
    t0 = time.perf_counter()
    fn()
    return (time.perf_counter() - t0) / units

n = max(int(2e5 * scale), 2000)
N = max(int(400 * scale), 50)
T = truncate(st, N)
psi = np.zeros(N); psi[0] = 1.0
res = {
    "backend": jgl.backend_name(),
    "propagate_per_site": timed(lambda: propagate(st, 0.3, n), n),
    "efgp_per_site": timed(lambda: run_trajectory(st, 0.3, n), n),
    "ql_per_n2": timed(lambda: eigensystem(T), N * N),
    "resolvent_per_site": timed(lambda: greens_column_log(T, 0.3 + 1j), N),
    "chebyshev_per_step": timed(lambda: evolve_moments(T, psi, np.linspace(0, 5, 11), [1],
                                                      method="chebyshev"), 10),
}
print(json.dumps(res))
"""


def run(disable, scale):
    env = dict(os.environ)
    env["JGL_DISABLE_NUMBA"] = "1" if disable else "0"
    out = subprocess.run([sys.executable, "-c", WORKER, str(scale)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0)
    args = ap.parse_args()

    fast = run(False, args.scale)
    slow = run(True, args.scale * 0.05)
    print(f"{'kernel':22s} {'numba':>12s} {'numpy':>12s} {'speedup':>9s}")
    for key in fast:
        if key == "backend":
            continue
        print(f"{key:22s} {fast[key]:12.3e} {slow[key]:12.3e} {slow[key] / fast[key]:8.1f}x")


if __name__ == "__main__":
    main()
