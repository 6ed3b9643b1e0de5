"""The pure-Python kernels (PPWAVE_DISABLE_JIT=1) agree with the compiled ones."""

import importlib.util
import json
import os
import subprocess
import sys

import numpy as np

PROBE = """
import json
import numpy as np
from ppwave import _jit, catalog
from ppwave.geodesic import GeodesicState, integrate, reduced_integrate
from ppwave.metric import christoffel, sample_points
from ppwave.transport import LoopSpec, loop_holonomy

out = {"jit": _jit.JIT_ENABLED}
m = catalog.get("torus_pp").metric
pts = sample_points(m.vs, 5, np.random.default_rng(0))
out["gamma"] = [christoffel(m, p).gamma.tolist() for p in pts]
r = integrate(m, GeodesicState(np.array([0, 0, 0.1, 0.2]), np.array([1, 0, 0.3, -0.1])), (-1, 1))
out["geo"] = r.positions[-1].tolist()
red = reduced_integrate(m, [0.1, 0.2], [0.3, -0.1], (0, 1))
out["red"] = red.x[-1].tolist()
h = loop_holonomy(m, LoopSpec.rectangle((2, 0), 0.1, [0, 0, 0, 0]))
out["hol"] = h.matrix.tolist()
inc = catalog.get("incomplete_recurrent").metric
b = integrate(inc, GeodesicState(np.zeros(3), np.array([1.0, 0, 0])), (-2, 0))
out["blowup"] = [b.verdict.kind, b.verdict.s_star]
print(json.dumps(out))
"""


def probe(disable):
    env = {**os.environ, "PPWAVE_DISABLE_JIT": "1" if disable else "0"}
    res = subprocess.run([sys.executable, "-c", PROBE], capture_output=True, text=True,
                         env=env, check=True)
    return json.loads(res.stdout)


def test_pure_python_path_matches_compiled():
    pure = probe(True)
    assert pure["jit"] is False
    ref = probe(False)
    assert ref["jit"] is (importlib.util.find_spec("numba") is not None)
    for key in ("gamma", "geo", "red", "hol"):
        np.testing.assert_allclose(pure[key], ref[key], rtol=1e-12, atol=1e-13)
    assert pure["blowup"][0] == ref["blowup"][0] == "BlowUp"
    assert abs(pure["blowup"][1] - ref["blowup"][1]) <= 1e-9
