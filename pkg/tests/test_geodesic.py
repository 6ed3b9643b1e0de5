import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppwave import catalog
from ppwave.expr import VarSpace, parse
from ppwave.geodesic import (GeodesicState, geodesic_equation_residual, geodesic_rhs, integrate,
                             reconstruct_uv, reduced_integrate)
from ppwave.metric import MetricSpec, PreconditionError
from ppwave.ode import IntegratorOpts

TIGHT = IntegratorOpts(rtol=1e-12, atol=1e-14)


def pp(H, n=1):
    vs = VarSpace(n)
    return MetricSpec.ppwave(vs, parse(H, vs))


def state(pos, vel):
    return GeodesicState(np.asarray(pos, float), np.asarray(vel, float))


def test_rhs_flat_is_zero():
    _, acc = geodesic_rhs(pp("0", 2), state([1, 2, 3, 4], [0.3, -1, 2, 5]))
    assert not np.any(acc)


def test_rhs_cos_wave():
    _, acc = geodesic_rhs(pp("cos(x1)"), state([0, 0, math.pi / 2], [1, 0, 0]))
    assert acc[2] == pytest.approx(-1.0)
    assert acc[1] == pytest.approx(0.0, abs=1e-15)


def test_rhs_incomplete_example():
    m = catalog.get("incomplete_recurrent").metric
    _, acc = geodesic_rhs(m, state([0.7, 0, 0], [1, 0, 0]))
    assert acc[0] == pytest.approx(-1.0)


def test_minkowski_straight_line():
    st0 = state([0, 1, 2, -1], [1, 0.5, -0.2, 0.3])
    r = integrate(pp("0", 2), st0, (-2, 3))
    assert r.verdict.kind == "Completed"
    expected = st0.position + np.outer(r.s, st0.velocity)
    assert np.max(np.abs(r.positions - expected)) <= 1e-12
    assert r.energy_drift <= 1e-12


def test_samples_strictly_monotone():
    r = integrate(catalog.get("torus_pp").metric, state([0, 0, 0.1, 0.2], [1, 0, 0.3, 0]), (-2, 2))
    assert np.all(np.diff(r.s) > 0)
    assert r.energy_drift >= 0 and r.null_drift >= 0


def test_cahen_wallach_cosh():
    r = integrate(pp("0.5*x1^2"), state([0, 0, 1], [1, 0, 0]), (0, 3), TIGHT)
    assert np.max(np.abs(r.positions[:, 2] / np.cosh(r.s) - 1)) <= 1e-8


def test_reduced_examples():
    red = reduced_integrate(pp("0", 2), [1, 2], [0.5, -1], (0, 4))
    np.testing.assert_allclose(red.x, np.array([1, 2]) + np.outer(red.s, [0.5, -1]), atol=1e-12)
    red = reduced_integrate(pp("0.5*x1^2"), [1], [0], (0, 3), TIGHT)
    assert np.max(np.abs(red.x[:, 0] / np.cosh(red.s) - 1)) <= 1e-8
    red = reduced_integrate(pp("cos(x1)"), [0], [0], (0, 5))
    assert not np.any(red.x)


def test_reduced_rejects_generalized():
    with pytest.raises(PreconditionError):
        reduced_integrate(catalog.get("incomplete_recurrent").metric, [0], [0], (0, 1))


def test_reconstruct_flat():
    m = pp("0")
    red = reduced_integrate(m, [0.3], [0.0], (0, 2))
    _, _, v = reconstruct_uv(m, red, 1.0, 0.0, 0.25)
    assert np.max(np.abs(v - 0.25)) <= 1e-14


def test_reconstruct_equilibrium():
    m = pp("cos(x1)")
    red = reduced_integrate(m, [0], [0], (0, 3))
    s, _, v = reconstruct_uv(m, red, 1.0, 0.0, 0.5)
    np.testing.assert_allclose(v, 0.5 - s, atol=1e-13)


def test_reconstruct_matches_full_on_cosh():
    m = pp("0.5*x1^2")
    red = reduced_integrate(m, [1], [0], (0, 3), TIGHT)
    s, _, v = reconstruct_uv(m, red, 1.0, 0.0, 0.0)
    full = integrate(m, state([0, 0, 1], [1, -0.5, 0]), (0, 3), TIGHT)  # E = 0 fixes dv(0)
    for si, vi in zip(s, v):
        assert full.dense(si)[0][1] == pytest.approx(vi, abs=1e-7)


def test_reconstruct_zero_a():
    m = pp("0")
    red = reduced_integrate(m, [0], [0], (0, 1))
    with pytest.raises(PreconditionError):
        reconstruct_uv(m, red, 0.0, 0.0, 0.0)


def test_reconstructed_curve_is_geodesic():
    m = catalog.get("torus_pp").metric
    x0, dx0 = np.array([0.3, -0.2]), np.array([0.1, 0.4])
    red = reduced_integrate(m, x0, dx0, (0, 4), TIGHT)
    full = integrate(m, state([0, 0, *x0], [1, 0, *dx0]), (0, 4), TIGHT)
    s, u, v = reconstruct_uv(m, red, 1.0, full.energy[0], 0.0)
    # the full curve through the reconstructed point satisfies the geodesic equation
    for si in s[5:-5:7]:
        p, q, a = full.dense(si)
        assert p[1] == pytest.approx(v[np.searchsorted(s, si)], abs=1e-7)
        assert geodesic_equation_residual(m, p, q, a) <= 1e-7


def test_incomplete_blowup():
    m = catalog.get("incomplete_recurrent").metric
    r = integrate(m, state([0, 0, 0], [1, 0, 0]), (-2, 0))
    assert r.verdict.kind == "BlowUp"
    assert abs(r.verdict.s_star + 1) <= 1e-3
    ok = 1 + r.s >= 1e-4
    assert np.max(np.abs(r.positions[ok, 0] - np.log1p(r.s[ok]))) <= 1e-6


def test_blowup_estimate_stable_under_rtol_halving():
    m = catalog.get("incomplete_recurrent").metric
    st0 = state([0, 0, 0], [1, 0, 0])
    a = integrate(m, st0, (-2, 0), IntegratorOpts(rtol=1e-9)).verdict
    b = integrate(m, st0, (-2, 0), IntegratorOpts(rtol=5e-10)).verdict
    assert b.kind == "BlowUp"
    assert abs(a.s_star - b.s_star) < max(a.uncertainty, b.uncertainty)


def test_invalid_span_and_options():
    m = pp("0")
    with pytest.raises(ValueError):
        integrate(m, state([0, 0, 0], [1, 0, 0]), (1, 2))
    with pytest.raises(ValueError):
        IntegratorOpts(rtol=0.5)


def test_stride_keeps_endpoints():
    r = integrate(catalog.get("torus_pp").metric, state([0, 0, 0.1, 0.2], [1, 0, 0.3, 0]), (-1, 1),
                  IntegratorOpts(sample_stride=5))
    assert r.s[0] == -1 and r.s[-1] == 1 and 0.0 in r.s


PP_NAMES = ["minkowski", "torus_pp", "cahen_wallach", "plane_wave_affine", "harmonic_cubic"]
coord = st.floats(-0.5, 0.5)


@settings(max_examples=25, deadline=None)
@given(name=st.sampled_from(PP_NAMES), x=st.lists(coord, min_size=4, max_size=4),
       a=st.floats(0.2, 1.5), dv=coord)
def test_conservation_and_affine_u(name, x, a, dv):
    m = catalog.get(name).metric
    n = m.n
    pos = np.r_[0.1, 0.0, x[:n]]
    vel = np.r_[a, dv, x[2:2 + n] if n == 2 else x[1:2]]
    r = integrate(m, GeodesicState(pos, vel), (0, 1.5), TIGHT)
    assert r.verdict.kind == "Completed"
    assert r.energy_drift <= 1e-8 * (1 + abs(r.energy[0]))
    assert r.null_drift <= 1e-10
    assert np.max(np.abs(r.positions[:, 0] - (0.1 + a * r.s))) <= 1e-10


@settings(max_examples=15, deadline=None)
@given(name=st.sampled_from(PP_NAMES), x=st.lists(coord, min_size=4, max_size=4))
def test_full_and_reduced_agree(name, x):
    m = catalog.get(name).metric
    n = m.n
    x0, dx0 = np.array(x[:n]), np.array(x[2:2 + n])
    full = integrate(m, GeodesicState(np.r_[0, 0, x0], np.r_[1, 0, dx0]), (0, 3), TIGHT)
    red = reduced_integrate(m, x0, dx0, (0, 3), TIGHT)
    assert full.verdict.kind == red.verdict.kind
    if red.verdict.kind == "BlowUp":
        # the cubic's transverse motion x'' = 3x^2 escapes in finite time
        assert abs(full.verdict.s_star - red.verdict.s_star) <= max(
            full.verdict.uncertainty, red.verdict.uncertainty)
    resolved = np.max(np.abs(red.x), axis=1) <= 1e3
    for s, xr in zip(red.s[resolved][::5], red.x[resolved][::5]):
        xf = full.dense(s)[0][2:]
        assert np.max(np.abs(xf - xr) / np.maximum(1, np.abs(xr))) <= 1e-6
