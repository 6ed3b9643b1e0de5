import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppwave.expr import (BudgetError, DomainError, ParseError, UnknownVariableError, VarSpace,
                         bound_estimate, const, cos, diff, evaluate, exp, free_vars, ln, parse,
                         poly_degree_in_x, sin, to_poly, to_text, var, compile_exprs)

VS = VarSpace(2)


def P(text, vs=VS):
    return parse(text, vs)


# --- parse ---------------------------------------------------------------

def test_parse_constant():
    e = P("0")
    assert e.op == "const" and e.value == 0.0


def test_parse_structure():
    e = P("cos(x1) + 0.5*cos(x2)")
    assert e.op == "add"
    left, right = e.args
    assert left.op == "cos" and left.args[0] == var("x1")
    assert right.op == "mul" and right.args[0].value == 0.5 and right.args[1].op == "cos"


def test_parse_keeps_v():
    vs = VarSpace(1)
    assert 1 in free_vars(parse("sin(v) - (cos(x1) - 1)", vs))


@pytest.mark.parametrize("text, pos", [("x1 +", 4), ("(x1", 3), ("2 ** x1", 3), ("x1 x2", 3)])
def test_parse_errors_carry_position(text, pos):
    with pytest.raises(ParseError) as err:
        P(text)
    assert err.value.position == pos


def test_unknown_variable_named():
    with pytest.raises(UnknownVariableError) as err:
        P("x3 + 1")
    assert "x3" in str(err.value)


def test_unary_minus_and_power_precedence():
    assert evaluate(P("-x1^2"), [0, 0, 3, 0]) == -9.0
    assert evaluate(P("2^-1"), [0, 0, 0, 0]) == 0.5
    assert evaluate(P("1 - 2 - 3"), [0] * 4) == -4.0
    assert evaluate(P("8/2/2"), [0] * 4) == 2.0


# --- diff ----------------------------------------------------------------

def test_diff_polynomial():
    assert diff(P("x1^2"), "x1") == P("2*x1")


def test_diff_chain_rule():
    assert to_text(diff(P("cos(x1)"), "x1")) == "-sin(x1)"


def test_second_derivative_constant_coefficient():
    S = 1.7
    e = const(S) * var("x1") * var("x1")
    d2 = diff(diff(e, "x1"), "x1")
    assert d2.op == "const" and d2.value == pytest.approx(2 * S, abs=1e-15)


def test_diff_simplifies_zero():
    assert diff(P("u*x2"), "x1").op == "const"


# --- eval ----------------------------------------------------------------

def test_eval_examples():
    assert evaluate(P("cos(x1)"), [0, 0, 0, 0]) == 1.0
    assert evaluate(P("2*u*x1"), [3, 0, 2, 0]) == 12.0


def test_eval_ln_domain():
    with pytest.raises(DomainError) as err:
        evaluate(P("1 + ln(u)"), [0, 0, 0, 0])
    assert err.value.subexpr.op == "ln"


def test_eval_division_by_zero():
    with pytest.raises(DomainError):
        evaluate(P("1/x1"), [0, 0, 0, 0])


def test_compiled_matches_tree(rng):
    e = P("exp(sin(u)*x1) + x2^3/(2 + cos(v)) - ln(3 + x1)")
    prog = compile_exprs([e])
    pts = rng.uniform(-1, 1, size=(50, 4))
    batch = prog.eval_batch(pts)[:, 0]
    tree = np.array([evaluate(e, p) for p in pts])
    np.testing.assert_allclose(batch, tree, rtol=1e-14, atol=1e-14)


# --- bound_estimate ------------------------------------------------------

def test_bound_known_extremum():
    vs = VarSpace(1)
    sup, arg = bound_estimate(parse("-cos(x1)", vs), {"x1": (0, 2 * math.pi)}, 101)
    assert sup == pytest.approx(1.0)
    assert arg[2] == pytest.approx(0.0)


def test_bound_linear():
    vs = VarSpace(1)
    sup, arg = bound_estimate(parse("2*x1", vs), {"x1": (0, 1)}, 11)
    assert sup == 2.0 and arg[2] == 1.0


def test_bound_torus_hessian_matches_fine_grid():
    H = P("cos(x1) + 0.5*cos(x2)")
    h11 = diff(diff(H, "x1"), "x1")
    box = {"x1": (0, 2 * math.pi), "x2": (0, 2 * math.pi)}
    sup, _ = bound_estimate(h11, box, 41)
    xs = np.linspace(0, 2 * math.pi, 2001)
    assert sup == pytest.approx(np.max(np.abs(np.cos(xs))), abs=1e-12)


def test_bound_budget():
    with pytest.raises(BudgetError):
        bound_estimate(P("x1*x2*u"), {"u": (0, 1), "x1": (0, 1), "x2": (0, 1)}, 1000,
                       max_evals=10_000)


# --- polynomial structure ------------------------------------------------

def test_poly_degree():
    assert poly_degree_in_x(P("u*x1*x2 + x1")) == 2
    assert poly_degree_in_x(P("cos(x1)")) is None
    assert poly_degree_in_x(P("1.5*x1^2 - 0.5*x2^2")) == 2
    assert poly_degree_in_x(P("sin(v)*x1")) is None
    assert poly_degree_in_x(P("x1/(1 + u^2)")) == 1
    assert poly_degree_in_x(P("x1/x2")) is None


def test_poly_cancellation():
    poly = to_poly(P("x1^3 - 3*x1*x2^2 + 3*x1*x2^2"), 2)
    assert set(poly) == {(3, 0)}


# --- properties ----------------------------------------------------------

_leaves = st.one_of(
    st.sampled_from(["u", "v", "x1", "x2"]).map(var),
    st.floats(-2, 2, allow_nan=False).map(lambda c: const(round(c, 3))),
)


def _extend(children):
    return st.one_of(
        st.tuples(children, children).map(lambda t: t[0] + t[1]),
        st.tuples(children, children).map(lambda t: t[0] * t[1]),
        st.tuples(children, children).map(lambda t: t[0] - t[1]),
        children.map(lambda a: -a),
        children.map(sin),
        children.map(cos),
        children.map(lambda a: exp(sin(a))),
        children.map(lambda a: ln(2 + cos(a))),
        st.tuples(children, children).map(lambda t: t[0] / (2 + sin(t[1]))),
        st.tuples(children, st.integers(0, 3)).map(lambda t: t[0] ** t[1]),
    )


exprs = st.recursive(_leaves, _extend, max_leaves=8)
points = st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4)
coords = st.sampled_from([0, 1, 2, 3])


@settings(max_examples=150, deadline=None)
@given(exprs, points, coords)
def test_diff_matches_central_difference(e, p, k):
    h = 1e-5
    d = evaluate(diff(e, k), p)
    hi, lo = list(p), list(p)
    hi[k] += h
    lo[k] -= h
    fd = (evaluate(e, hi) - evaluate(e, lo)) / (2 * h)
    assert abs(d - fd) <= 1e-6 * (1 + abs(d))


@settings(max_examples=150, deadline=None)
@given(exprs, points, coords, coords)
def test_mixed_partials_commute(e, p, a, b):
    ab = evaluate(diff(diff(e, a), b), p)
    ba = evaluate(diff(diff(e, b), a), p)
    assert abs(ab - ba) <= 1e-10 * max(1.0, abs(ab))


@settings(max_examples=100, deadline=None)
@given(exprs)
def test_print_parse_roundtrip(e):
    back = parse(to_text(e), VS)
    pts = np.random.default_rng(7).uniform(-1, 1, size=(100, 4))
    for p in pts:
        x, y = evaluate(e, p), evaluate(back, p)
        assert abs(x - y) <= 1e-12 * max(1.0, abs(x))
