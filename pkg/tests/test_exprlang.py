import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tmunfold.errors import DomainEvalError, ExprSyntaxError, StencilOutOfDomain, UnboundVariable, UnknownFunction
from tmunfold.exprlang import FUNCTIONS, diff_fd, evaluate, parse_expr, stencil


def test_free_variables_of_a_term():
    assert parse_expr("u + r*sin(l)").free_vars() == {"u", "r", "l"}


@pytest.mark.parametrize("r", [-2.0, -0.3, 0.0, 0.7, 3.0])
def test_negation_binds_looser_than_power(r):
    assert evaluate(parse_expr("-(r)^2"), {"r": r}) == -(r * r)
    assert evaluate(parse_expr("-r^2"), {"r": r}) == -(r * r)


def test_power_is_left_associative():
    assert evaluate(parse_expr("2^3^2"), {}) == 64.0


def test_incomplete_expression_reports_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr("r + ")
    assert info.value.offset == 4
    assert info.value.expected


def test_offsets_count_bytes():
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr("r + é")
    assert info.value.offset == 4
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr("é")
    assert info.value.offset == 0


def test_unknown_function():
    with pytest.raises(UnknownFunction):
        parse_expr("cosh(r)")


def test_whitespace_insensitive():
    assert str(parse_expr(" u+ r *sin( l ) ")) == str(parse_expr("u + r*sin(l)"))


def test_basic_evaluation():
    assert evaluate(parse_expr("2*r"), {"r": 3}) == 6
    assert abs(evaluate(parse_expr("sin(pi)"), {})) < 1e-12


@pytest.mark.parametrize("src, env", [("log(r)", {"r": 0.0}), ("sqrt(r)", {"r": -1.0}), ("1/r", {"r": 0.0}),
                                      ("exp(r)", {"r": 1e6})])
def test_domain_errors(src, env):
    with pytest.raises(DomainEvalError):
        evaluate(parse_expr(src), env)


def test_unbound_variable():
    with pytest.raises(UnboundVariable):
        evaluate(parse_expr("r + q"), {"r": 1.0})


def test_array_evaluation_broadcasts():
    out = evaluate(parse_expr("u*l + 1"), {"u": np.array([1.0, 2.0]), "l": np.array([3.0, 4.0])})
    assert np.array_equal(out, [4.0, 9.0])


def test_substitute_replaces_variables():
    e = parse_expr("l + r").substitute({"r": parse_expr("abs(t)")})
    assert e.free_vars() == {"l", "t"}
    assert evaluate(e, {"l": 1.0, "t": -2.0}) == 3.0


def test_fd_even_function_has_zero_slope():
    assert abs(diff_fd(parse_expr("r^2"), "r", {"r": 0.0}, 1, "central", 1e-4)) < 1e-6


def test_fd_kink_of_abs():
    e = parse_expr("abs(r)")
    left = diff_fd(e, "r", {"r": 0.0}, 1, "left", 1e-4)
    right = diff_fd(e, "r", {"r": 0.0}, 1, "right", 1e-4)
    assert left == pytest.approx(-1.0, abs=1e-9)
    assert right == pytest.approx(1.0, abs=1e-9)
    assert right - left == pytest.approx(2.0, abs=1e-9)


def test_fd_odd_function_has_zero_curvature():
    assert abs(diff_fd(parse_expr("r^3"), "r", {"r": 0.0}, 2, "central", 1e-3)) < 1e-5


def test_one_sided_stencils_have_enough_points():
    for order in (1, 2, 3):
        offsets, weights = stencil(order, "right")
        assert len(offsets) >= order + 1 and min(offsets) == 0
        assert stencil(order, "left")[0] == tuple(-o for o in offsets)
        c_off, c_w = stencil(order, "central")
        assert tuple(-o for o in c_off) == tuple(reversed(c_off))


def test_stencil_out_of_domain():
    with pytest.raises(StencilOutOfDomain):
        diff_fd(parse_expr("sqrt(r)"), "r", {"r": 0.0}, 1, "central", 1e-3, bounds=(0.0, 1.0))
    assert diff_fd(parse_expr("r"), "r", {"r": 0.0}, 1, "right", 1e-3, bounds=(0.0, 1.0)) == pytest.approx(1.0)


def test_fd_rejects_bad_arguments():
    with pytest.raises(ValueError):
        diff_fd(parse_expr("r"), "r", {"r": 0.0}, 4)
    with pytest.raises(ValueError):
        diff_fd(parse_expr("r"), "r", {"r": 0.0}, 1, "central", 0.0)


# -- properties -------------------------------------------------------------

names = st.sampled_from(["u", "l", "r", "t", "x1"])
numbers = st.floats(min_value=0, max_value=1e6, allow_nan=False).map(lambda v: repr(round(v, 6)))


def _exprs():
    leaves = st.one_of(names, numbers, st.just("pi"))

    def extend(inner):
        return st.one_of(
            st.tuples(inner, st.sampled_from(["+", "-", "*", "/", "^"]), inner).map(lambda p: f"{p[0]} {p[1]} {p[2]}"),
            inner.map(lambda s: f"-{s}"),
            inner.map(lambda s: f"({s})"),
            st.tuples(st.sampled_from(FUNCTIONS), inner).map(lambda p: f"{p[0]}({p[1]})"),
        )

    return st.recursive(leaves, extend, max_leaves=12)


@given(_exprs())
@settings(max_examples=300)
def test_printed_form_reparses_to_same_tree(src):
    tree = parse_expr(src)
    assert parse_expr(str(tree)) == tree


@given(
    st.lists(st.floats(-3, 3), min_size=4, max_size=4),
    st.floats(-1, 1),
    st.floats(1e-6, 1e-3),
    st.sampled_from([1, 2, 3]),
    st.sampled_from(["central", "left", "right"]),
)
@settings(max_examples=300)
def test_fd_exact_on_cubics(coef, x, h, order, side):
    c0, c1, c2, c3 = coef
    e = parse_expr(f"{c0!r} + {c1!r}*r + {c2!r}*r^2 + {c3!r}*r^3")
    exact = {1: c1 + 2 * c2 * x + 3 * c3 * x * x, 2: 2 * c2 + 6 * c3 * x, 3: 6 * c3}[order]
    # roundoff grows like eps / h^order; the truncation error of these stencils vanishes on cubics
    # except the one-sided second derivative, whose error term is a multiple of c3 * h
    roundoff = 64 * np.finfo(float).eps * 50 / h**order
    assert abs(diff_fd(e, "r", {"r": x}, order, side, h) - exact) <= 100 * h + roundoff


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_evaluation_is_pure(a, b):
    e = parse_expr("sin(u)*exp(-l^2) + u/(1 + l^2)")
    env = {"u": a, "l": b}
    assert math.isclose(evaluate(e, env), evaluate(e, dict(env)), rel_tol=0, abs_tol=0)
