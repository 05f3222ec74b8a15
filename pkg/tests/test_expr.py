import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irregsde.expr import Expression, ExpressionError, compile_expr, tx_function, txu_function


def test_arithmetic_and_powers():
    e = Expression("1 + 2*x - x^2 / 4")
    assert e(t=0, x=2.0) == pytest.approx(4.0)
    assert Expression("2 ** 3")(t=0, x=0) == 8.0
    assert Expression("-x")(t=0, x=3.0) == -3.0


def test_indicator_half_open():
    e = Expression("indicator(0, 1)")
    xs = np.array([-0.1, 0.0, 0.5, 1.0, 1.1])
    assert list(e(t=0, x=xs)) == [0, 1, 1, 0, 0]


def test_indicator_three_argument_form():
    e = Expression("indicator(u, -inf, 0)", ("t", "x", "u"))
    assert list(e(t=0, x=0, u=np.array([-1.0, 0.0, 2.0]))) == [1, 0, 0]


def test_functions():
    e = Expression("sqrt(min(abs(x), 1)) + max(x, 0) + sign(x)")
    assert e(t=0, x=-4.0) == pytest.approx(1.0 + 0.0 - 1.0)
    assert Expression("exp(log(x)) + sin(pi/2) + cos(0)")(t=0, x=3.0) == pytest.approx(5.0)


def test_broadcasting_between_variables():
    e = Expression("t + x")
    out = e(t=np.array([[0.0], [1.0]]), x=np.array([1.0, 2.0, 3.0]))
    assert out.shape == (2, 3)
    assert out[1, 2] == 4.0


def test_constant_expression_broadcasts_to_input_shape():
    out = Expression("2")(t=0.0, x=np.zeros(5))
    assert out.shape == (5,) and np.all(out == 2.0)


def test_uses():
    assert Expression("t * 2 + 1").uses == {"t"}
    assert Expression("3").uses == frozenset()


@pytest.mark.parametrize(
    "text",
    [
        "y + 1",
        "foo(x)",
        "x.real",
        "__import__('os')",
        "[x]",
        "x if x else 1",
        "True",
        "lambda: 1",
        "abs(x=1)",
        "x < 1",
        "'s'",
    ],
)
def test_rejects_everything_outside_the_grammar(text):
    with pytest.raises(ExpressionError):
        Expression(text)


def test_syntax_error_is_expression_error():
    with pytest.raises(ExpressionError, match="cannot parse"):
        Expression("1 +")


def test_wrong_arity():
    with pytest.raises(ExpressionError, match="takes 1"):
        Expression("sin(x, x)")


def test_missing_variable():
    with pytest.raises(ExpressionError, match="missing"):
        Expression("x")(t=0.0)


def test_unknown_name_lists_allowed():
    with pytest.raises(ExpressionError, match="allowed"):
        Expression("z")


def test_wrappers():
    f = tx_function("t * x")
    assert f(2.0, 3.0) == 6.0
    g = txu_function("u - x")
    assert g(0.0, 1.0, 3.0) == 2.0
    assert compile_expr("x", ("x",))(x=4.0) == 4.0


_leaf = st.one_of(st.just("x"), st.integers(1, 9).map(str))


def _combine(children):
    return st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})")


@settings(max_examples=60, deadline=None)
@given(st.recursive(_leaf, _combine, max_leaves=8), st.floats(-3, 3))
def test_polynomials_agree_with_python(text, x):
    expected = eval(text, {}, {"x": x})
    got = Expression(text)(t=0.0, x=x)
    assert got == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_division_by_zero_gives_inf_quietly():
    assert math.isinf(Expression("1 / x")(t=0, x=0.0))
