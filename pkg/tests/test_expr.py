import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastslow.errors import ConfigError, ExprSyntaxError
from fastslow.expr import differentiate, evaluate, free_variables, parse_expression, to_text


def test_preset_omega_value():
    node = parse_expression("cos(2*pi*x)+0.5*sin(2*pi*theta)")
    assert evaluate(node, 0.0, 0.25) == pytest.approx(1.5, abs=1e-15)


def test_derivative_of_cosine():
    d = differentiate(parse_expression("cos(2*pi*x)"), "x")
    assert evaluate(d, 0.25, 0.0) == pytest.approx(-2 * math.pi, abs=1e-12)


def test_free_variables():
    assert free_variables(parse_expression("2*x + sin(pi)")) == {"x"}


@pytest.mark.parametrize("text", ["", "2*", "sin(x", "foo(x)", "x $ 2", "x^0.5", "y"])
def test_syntax_errors(text):
    with pytest.raises((ExprSyntaxError, ConfigError)):
        parse_expression(text)


def test_length_limit():
    with pytest.raises(ConfigError):
        parse_expression("x+" * 3000 + "x")


_leaf = st.sampled_from(["x", "theta", "pi", "1", "2.5", "0.1"])


def _combine(children):
    return st.one_of(
        st.tuples(children, st.sampled_from("+-*"), children).map(lambda t: f"({t[0]}{t[1]}{t[2]})"),
        st.tuples(st.sampled_from(["sin", "cos", "exp"]), children).map(lambda t: f"{t[0]}({t[1]})"),
        children.map(lambda c: f"-{c}"),
        children.map(lambda c: f"({c})^2"),
    )


expressions = st.recursive(_leaf, _combine, max_leaves=8)
points = st.floats(-1.0, 1.0, allow_nan=False)


@settings(max_examples=150, deadline=None)
@given(expressions, points, points)
def test_print_parse_round_trip(text, x, th):
    node = parse_expression(text)
    again = parse_expression(to_text(node))
    a, b = evaluate(node, x, th), evaluate(again, x, th)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(expressions, st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.sampled_from(["x", "theta"]))
def test_derivative_matches_finite_difference(text, x, th, var):
    node = parse_expression(text)
    d = evaluate(differentiate(node, var), x, th)
    h = 1e-6
    if var == "x":
        fd = (evaluate(node, x + h, th) - evaluate(node, x - h, th)) / (2 * h)
    else:
        fd = (evaluate(node, x, th + h) - evaluate(node, x, th - h)) / (2 * h)
    assert abs(d - fd) <= 1e-5 * max(1.0, abs(d))
