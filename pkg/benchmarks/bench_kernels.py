"""Compiled (numba) vs pure-Python kernels on typical workloads.

Each mode runs in a child process because the JIT switch is read at import.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKLOADS = """
import json, sys, time
import numpy as np
from ppwave import _jit, catalog
from ppwave.geodesic import GeodesicState, integrate, reduced_integrate
from ppwave.metric import sample_points
from ppwave.transport import LoopSpec, loop_holonomy

repeat = int(sys.argv[1])
torus = catalog.get("torus_pp").metric
cw = catalog.get("cahen_wallach").metric
pts = sample_points(torus.vs, 20000, np.random.default_rng(0))
st0 = GeodesicState(np.array([0, 0, 0.1, 0.2]), np.array([1, 0, 0.3, -0.1]))


def curvature_inputs():
    torus.curvature_programs.eval_batch(pts)


def geodesic():
    integrate(torus, st0, (-20, 20))


def reduced():
    reduced_integrate(cw, [0.1, 0.2], [0.0, 0.1], (0, 5))


def holonomy():
    loop_holonomy(torus, LoopSpec.rectangle((2, 0), 0.1, [0, 0, 0, 0]))


out = {"jit": _jit.JIT_ENABLED}
for fn in (curvature_inputs, geodesic, reduced, holonomy):
    fn()  # compile / warm caches
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    out[fn.__name__] = best
print(json.dumps(out))
"""


def run(disable: bool, repeat: int) -> dict:
    env = {**os.environ, "PPWAVE_DISABLE_JIT": "1" if disable else "0"}
    res = subprocess.run([sys.executable, "-c", WORKLOADS, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    t0 = time.perf_counter()
    jit = run(False, args.repeat)
    pure = run(True, args.repeat)
    if not jit["jit"]:
        print("numba unavailable: both columns use the pure-Python kernels")
    print(f"{'workload':<20}{'numba [s]':>12}{'python [s]':>12}{'speedup':>10}")
    for key in jit:
        if key == "jit":
            continue
        a, b = jit[key], pure[key]
        print(f"{key:<20}{a:>12.4f}{b:>12.4f}{b / a:>9.1f}x")
    print(f"total wall time {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
