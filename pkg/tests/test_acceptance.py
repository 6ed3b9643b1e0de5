"""Acceptance criteria 1-12.

Each test prints one ``[PASS]``/``[FAIL]`` line (visible with ``pytest -v`` or
``python3 tests/test_acceptance.py``) with the measured figures, then asserts.
"""

import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from ppwave import catalog
from ppwave.classify import ClassifyOpts, classify
from ppwave.expr import VarSpace, compile_exprs, diff, parse
from ppwave.geodesic import (GeodesicState, geodesic_equation_residual, integrate,
                             reconstruct_uv, reduced_integrate)
from ppwave.metric import MetricSpec, curvature, ricci, sample_points
from ppwave.normalize import decompose, normalize_plane_wave
from ppwave.ode import IntegratorOpts
from ppwave.transport import (LoopSpec, holonomy_membership, jacobi_property_check,
                              loop_holonomy, loop_shrinking, screen_diagnostics, standard_screen)

U, V = 0, 1
PP_ENTRIES = ["minkowski", "torus_pp", "cahen_wallach", "plane_wave_affine", "harmonic_cubic"]
TWO_PI = 2 * math.pi


def report(request, number, ok, detail, elapsed, limit=None):
    within = limit is None or elapsed <= limit
    status = "PASS" if ok and within else "FAIL"
    budget = f" (limit {limit:g} s)" if limit is not None else ""
    line = f"[{status}] criterion {number:>2}: {detail}; {elapsed:.2f} s{budget}"
    with request.config.pluginmanager.get_plugin("capturemanager").global_and_fixture_disabled():
        print("\n" + line, flush=True)
    assert ok, line
    assert within, line


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def _hessian_progs(m):
    n = m.n
    return compile_exprs([diff(diff(m.H, 2 + i), 2 + j) for i in range(n) for j in range(n)])


def test_criterion_01_curvature_formula(request):
    worst_pattern = worst_other = 0.0
    rng = np.random.default_rng(1)
    with Timer() as t:
        for name in PP_ENTRIES:
            m = catalog.get(name).metric
            n, N = m.n, m.dim
            hess = _hessian_progs(m)
            for p in sample_points(m.vs, 100, rng):
                R = curvature(m, p, "generic").R
                Hij = hess.eval(p).reshape(n, n)
                expected = np.zeros((N, N, N, N))
                for i in range(n):
                    for j in range(n):
                        a, b = 2 + i, 2 + j
                        expected[a, U, U, b] = expected[U, a, b, U] = -Hij[i, j]
                        expected[a, U, b, U] = expected[U, a, U, b] = Hij[i, j]
                mask = expected != 0
                worst_pattern = max(worst_pattern, float(np.max(np.abs(R - expected)[mask], initial=0)))
                worst_other = max(worst_other, float(np.max(np.abs(R[~mask]))))
    ok = worst_pattern <= 1e-9 and worst_other <= 1e-9
    report(request, 1, ok, f"max |R_iuuj + d_i d_j H| = {worst_pattern:.2e}, "
           f"max off-pattern |R| = {worst_other:.2e}", t.elapsed, 5)


def test_criterion_02_ricci_identity(request):
    worst = 0.0
    rng = np.random.default_rng(1)
    with Timer() as t:
        for name in PP_ENTRIES:
            m = catalog.get(name).metric
            lap = compile_exprs([sum((diff(diff(m.H, c), c) for c in range(2, m.dim)),
                                     parse("0", m.vs))])
            for p in sample_points(m.vs, 100, rng):
                worst = max(worst, abs(ricci(m, p)[U, U] + lap.eval(p)[0]))
    report(request, 2, worst <= 1e-9, f"max |Ric_uu + sum d_i^2 H| = {worst:.2e}", t.elapsed, 2)


# criteria 3 and 4 share runs; initial data |x|, |dx|, |v|, |dv| <= 0.5 and tight tolerances
_CRIT3_OPTS = IntegratorOpts(rtol=1e-13, atol=1e-15)
_crit3_cache = {}


def _criterion3_runs():
    if _crit3_cache:
        return _crit3_cache
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    out = []
    for name in ("torus_pp", "cahen_wallach"):
        m = catalog.get(name).metric
        for _ in range(20):
            x, dx = rng.uniform(-0.5, 0.5, 2), rng.uniform(-0.5, 0.5, 2)
            v0, dv0 = rng.uniform(-0.5, 0.5, 2)
            full = integrate(m, GeodesicState(np.r_[0, v0, x], np.r_[1, dv0, dx]), (0, 5), _CRIT3_OPTS)
            red = reduced_integrate(m, x, dx, (0, 5), _CRIT3_OPTS)
            s, _, v = reconstruct_uv(m, red, 1.0, full.energy[0], v0)
            out.append((name, full, red, s, v))
    _crit3_cache.update(runs=out, elapsed=time.perf_counter() - t0)
    return _crit3_cache


def test_criterion_03_full_reduced_equivalence(request):
    data = _criterion3_runs()
    wx = wv = 0.0
    with Timer() as t:
        for _, full, red, s, v in data["runs"]:
            for si, xi, vi in zip(s, red.x, v):
                p = full.dense(si)[0]
                wx = max(wx, float(np.max(np.abs(p[2:] - xi) / np.maximum(1.0, np.abs(xi)))))
                wv = max(wv, abs(p[1] - vi) / max(1.0, abs(vi)))
    ok = wx <= 1e-6 and wv <= 1e-7
    report(request, 3, ok, f"x rel err {wx:.2e}, reconstructed v rel err {wv:.2e} "
           f"(40 runs, |ICs| <= 0.5)", data["elapsed"] + t.elapsed, 20)


def test_criterion_04_conservation(request):
    data = _criterion3_runs()
    with Timer() as t:
        done = [f for _, f, *_ in data["runs"] if f.verdict.completed]
        ed = max(f.energy_drift for f in done)
        nd = max(f.null_drift for f in done)
    ok = len(done) == len(data["runs"]) and ed <= 1e-8 and nd <= 1e-10
    report(request, 4, ok, f"energy drift {ed:.2e}, null drift {nd:.2e} over "
           f"{len(done)}/{len(data['runs'])} Completed runs", t.elapsed)


def test_criterion_05_cahen_wallach_closed_form(request):
    vs = VarSpace(1)
    m = MetricSpec.ppwave(vs, parse("x1^2/2", vs))
    with Timer() as t:
        red = reduced_integrate(m, [1.0], [0.0], (0, 3), IntegratorOpts(rtol=1e-12, atol=1e-14))
        full = integrate(m, GeodesicState(np.array([0, 0, 1.0]), np.array([1.0, 0, 0])), (0, 3),
                         IntegratorOpts(rtol=1e-12, atol=1e-14))
        e_red = float(np.max(np.abs(red.x[:, 0] / np.cosh(red.s) - 1)))
        e_full = float(np.max(np.abs(full.positions[:, 2] / np.cosh(full.s) - 1)))
    ok = max(e_red, e_full) <= 1e-8
    report(request, 5, ok, f"rel err vs cosh: reduced {e_red:.2e}, full {e_full:.2e}", t.elapsed, 1)


def test_criterion_06_incompleteness_witness(request):
    m = catalog.get("incomplete_recurrent").metric
    with Timer() as t:
        res_a = 0.0
        for tt in np.linspace(0.1, 10, 50):
            res_a = max(res_a, geodesic_equation_residual(
                m, [math.log(tt), 0, 0], [1 / tt, 0, 0], [-1 / tt ** 2, 0, 0], method="generic"))
        r = integrate(m, GeodesicState(np.zeros(3), np.array([1.0, 0, 0])), (-2, 0))
        v = r.verdict
        # resolved range: samples before the state norm leaves 1e4
        ok_range = 1 + r.s >= 1e-4
        u_err = float(np.max(np.abs(r.positions[ok_range, 0] - np.log1p(r.s[ok_range]))))
    ok = (res_a <= 1e-9 and v.kind == "BlowUp" and abs(v.s_star + 1) <= 1e-3 and u_err <= 1e-6)
    report(request, 6, ok, f"(a) residual {res_a:.2e}; (b) {v.kind} s*={v.s_star!r} "
           f"+/- {v.uncertainty:.1e}, |u - ln(1+s)| = {u_err:.2e} on 1+s >= 1e-4", t.elapsed, 5)


def _torus(text):
    vs = VarSpace.with_periods(2, {"u": TWO_PI, "x1": TWO_PI, "x2": TWO_PI})
    return MetricSpec.ppwave(vs, parse(text, vs))


def test_criterion_07_completeness_certificates(request):
    opts = ClassifyOpts(n_samples=100)
    with Timer() as t:
        torus = classify(catalog.get("torus_pp").metric, opts).completeness
        affine = classify(catalog.get("plane_wave_affine").metric, opts).completeness
        cubic = classify(catalog.get("harmonic_cubic").metric, opts)
        attempts = ["x1^3 - 3*x1*x2^2", "x1*x2", "cos(x1)*(exp(x2) + exp(-x2))",
                    "exp(x1)*sin(x2)", "cos(x1) - cos(x2)", "cos(x1 + x2) + x1*x2"]
        bad = []
        for text in attempts:
            r = classify(_torus(text), opts)
            if r.completeness.rule == "COMPACT_PERIODIC" and r.is_ricci_flat and not r.is_plane_wave:
                bad.append(text)
    ok = ((torus.status, torus.rule) == ("Certified", "COMPACT_PERIODIC")
          and (affine.status, affine.rule) == ("Certified", "PLANE_WAVE")
          and cubic.completeness.status == "NotCertified" and cubic.is_ricci_flat
          and not cubic.is_plane_wave and not bad)
    report(request, 7, ok, f"torus_pp {torus.rule}, plane_wave_affine {affine.rule}, "
           f"harmonic_cubic {cubic.completeness.status}; {len(attempts)} compact Ricci-flat "
           f"attempts, {len(bad)} accepted", t.elapsed, 2)


def test_criterion_08_holonomy_form(request):
    m = catalog.get("torus_pp").metric
    rng = np.random.default_rng(8)
    planes = [(2, U), (3, U), (2, 3), (2, U), (3, U)] * 2
    fix = pres = mid = 0.0
    orders = []
    with Timer() as t:
        for plane in planes:
            base = rng.uniform(-3, 3, m.dim)
            h = loop_holonomy(m, LoopSpec.rectangle(plane, 0.05, base))
            res = holonomy_membership(h)["residuals"]
            fix = max(fix, res["fixes_V"])
            pres = max(pres, res["metric_preservation"])
            mid = max(mid, res["middle_block"])
            orders.append(loop_shrinking(m, base, plane)["order"])
    finite = [o for o in orders if math.isfinite(o)]
    ok = fix <= 1e-8 and pres <= 1e-8 and mid <= 1e-4 and min(orders) >= 1
    report(request, 8, ok, f"fixes d_v {fix:.1e}, g preserved {pres:.1e}, middle block {mid:.1e}; "
           f"shrinking order min {min(finite):.2f} ({len(orders) - len(finite)} flat planes exact)",
           t.elapsed, 10)


def test_criterion_09_screen_diagnostics(request):
    rng = np.random.default_rng(9)
    with Timer() as t:
        m = catalog.get("torus_pp").metric
        r = screen_diagnostics(m, *standard_screen(m), sample_points(m.vs, 50, rng))["residuals"]
        b1 = catalog.get("bundle_chart", a=[[0, 1], [-1, 0]]).metric
        d1 = screen_diagnostics(b1, *standard_screen(b1), sample_points(b1.vs, 50, rng))
        b0 = catalog.get("bundle_chart", a=[[0, 0], [0, 0]]).metric
        d0 = screen_diagnostics(b0, *standard_screen(b0), sample_points(b0.vs, 50, rng))
    nonflat = d1["dZ_flat_pairs"]["S1,S2"]
    flat = d0["residuals"]["dZ_flat"]
    ok = (r["alpha_V"] <= 1e-10 and r["alpha_involutivity"] <= 1e-10 and r["d_alpha"] <= 1e-9
          and nonflat >= 0.5 and flat <= 1e-10)
    report(request, 9, ok, f"torus alpha(V) {r['alpha_V']:.1e}, involutivity "
           f"{r['alpha_involutivity']:.1e}, d alpha {r['d_alpha']:.1e}; bundle a12=1 "
           f"|dZ(S1,S2)| = {nonflat:.3f}, a=0 {flat:.1e}", t.elapsed, 3)


@pytest.mark.xfail(strict=True, reason="the stated closed forms solve beta'' = -b, which drops "
                   "the 2 a beta term the transformation needs for a != 0; see test_normalize "
                   "for the correct oracle")
def test_criterion_10_plane_wave_normalization(request):
    m = catalog.get("plane_wave_affine").metric
    with Timer() as t:
        r = normalize_plane_wave(decompose(m.H, m.vs), (-2, 2))
        eb = eg = 0.0
        for u in np.linspace(-2, 2, 41):
            if u == 0:
                continue
            eb = max(eb, abs(r.beta_at(u)[0] / (-u ** 3 / 6) - 1))
            eg = max(eg, abs(r.gamma_at(u) / (-u ** 5 / 40) - 1))
    iso, geo = r.residuals["isometry"], r.residuals["geodesic"]
    assert iso <= 1e-8 and geo <= 1e-6
    ok = eb <= 1e-8 and eg <= 1e-8
    report(request, 10, ok, f"closed form rel err beta {eb:.2e}, gamma {eg:.2e}; isometry "
           f"{iso:.1e}, geodesic {geo:.1e}", t.elapsed, 5)


def test_criterion_11_jacobi_property(request):
    m = catalog.get("torus_pp").metric
    with Timer() as t:
        worst = 0.0
        for pos, vel, X0 in [([0.3, 0, 0.2, 0.1], [0, 0.5, 1.0, 0.3], [0, 0, 1, 0]),
                             ([1.0, 0.4, -0.5, 2.0], [0, -0.2, 0.3, -0.8], [0, 0, 0.6, 0.8]),
                             ([-2.0, 0, 1.0, 0], [0, 1.0, 0.0, 1.0], [1, 0, 0, 0])]:
            st0 = GeodesicState(np.array(pos, float), np.array(vel, float))
            worst = max(worst, jacobi_property_check(m, st0, X0, 2.0))

        def rotated(tt):
            return np.array([0, 0, math.cos(tt), math.sin(tt)])

        st0 = GeodesicState(np.array([0.3, 0, 0.2, 0.1]), np.array([0, 0.5, 1.0, 0.3]))
        control = jacobi_property_check(m, st0, [0, 0, 1, 0], 2.0, X_override=rotated)
    ok = worst <= 1e-6 and control >= 1e-2
    report(request, 11, ok, f"parallel residual {worst:.1e}, rotated control {control:.2f}",
           t.elapsed, 2)


CLI_COMMANDS = [
    ["classify", "--metric", "catalog:torus_pp"],
    ["classify", "--metric", "catalog:minkowski"],
    ["geodesic", "--metric", "catalog:incomplete_recurrent", "--pos", "0,0,0", "--vel", "1,0,0",
     "--span", "-2:0", "--out", "{tmp}/traj.csv"],
    ["geodesic", "--metric", "catalog:incomplete_recurrent", "--pos", "0,0,0", "--vel", "1,0,0",
     "--span", "-0.999:0"],
    ["complete", "--metric", "catalog:torus_pp", "--budget", "2", "--count", "4"],
    ["holonomy", "--metric", "catalog:torus_pp", "--loop", "rect:a=x1,b=u,eps=0.05"],
    ["screen", "--metric", "catalog:bundle_chart"],
    ["normalize", "--metric", "catalog:plane_wave_affine", "--u-span", "-2:2",
     "--csv", "{tmp}/beta.csv"],
    ["curvature", "--metric", "catalog:torus_pp", "--at", "u=0,x1=0.5"],
]


def _artifacts(argv, tmp):
    cmd = [sys.executable, "-m", "ppwave", *(a.format(tmp=tmp) for a in argv), "--seed", "11"]
    res = subprocess.run(cmd, capture_output=True, env={**os.environ, "PPWAVE_SEED": ""})
    files = {f: (tmp / f).read_bytes() for f in sorted(os.listdir(tmp))}
    return res.returncode, res.stdout, res.stderr, files


def test_criterion_12_determinism(request, tmp_path):
    differing = []
    with Timer() as t:
        for k, argv in enumerate(CLI_COMMANDS):
            a_dir, b_dir = tmp_path / f"a{k}", tmp_path / f"b{k}"
            a_dir.mkdir()
            b_dir.mkdir()
            a, b = _artifacts(argv, a_dir), _artifacts(argv, b_dir)
            if a[0] != 0 or a != b:
                differing.append(argv[0])
    report(request, 12, not differing, f"{len(CLI_COMMANDS)} CLI commands run twice, "
           f"{len(differing)} differing or failing {differing}", t.elapsed)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
