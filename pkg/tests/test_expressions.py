import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jdinfo.expressions import (
    BinOp,
    Call,
    EvaluationError,
    ExpressionError,
    Neg,
    Num,
    Var,
    parse_expression,
    unparse,
)


def test_zero_field():
    f = parse_expression("0")
    assert f(3.7, 1.2) == 0.0
    assert np.all(f(np.linspace(-5, 5, 11), 0.0) == 0.0)


def test_direct_arithmetic():
    f = parse_expression("-0.5*x + sin(t)")
    assert f(2.0, 0.0) == -1.0


def test_inverse_pair_and_domain_error():
    f = parse_expression("exp(log(x))")
    assert f(3.0, 0.0) == pytest.approx(3.0, abs=1e-15)
    with pytest.raises(EvaluationError):
        f(-1.0, 0.0)


def test_constants_and_functions():
    assert parse_expression("pi")(0, 0) == pytest.approx(math.pi)
    assert parse_expression("e")(0, 0) == pytest.approx(math.e)
    assert parse_expression("sqrt(x)")(4.0, 0) == 2.0
    assert parse_expression("tanh(x)")(0.0, 0) == 0.0
    assert parse_expression("abs(x)")(-2.5, 0) == 2.5
    assert parse_expression("cos(x)")(0.0, 0) == 1.0


def test_precedence_and_power():
    assert parse_expression("2 + 3 * 4")(0, 0) == 14.0
    assert parse_expression("-x^2")(3.0, 0) == -9.0
    assert parse_expression("2^-2")(0, 0) == 0.25
    assert parse_expression("2^3^2")(0, 0) == 512.0  # right-associative
    assert parse_expression("(2+3)*4")(0, 0) == 20.0


def test_division_by_zero_is_error():
    f = parse_expression("1/x")
    assert f(2.0, 0.0) == 0.5
    with pytest.raises(EvaluationError):
        f(0.0, 0.0)
    with pytest.raises(EvaluationError):
        f(np.array([1.0, 0.0, 2.0]), 0.0)


def test_negative_fractional_power_is_error():
    with pytest.raises(EvaluationError):
        parse_expression("x^0.5")(-1.0, 0.0)
    # integer exponents of negative bases are fine
    assert parse_expression("x^2")(-3.0, 0.0) == 9.0


def test_overflow_is_error():
    with pytest.raises(EvaluationError):
        parse_expression("exp(x)")(1e6, 0.0)


def test_syntax_error_reports_byte_offset():
    with pytest.raises(ExpressionError) as err:
        parse_expression("1 + * 2")
    assert err.value.offset == 4


def test_unknown_identifier():
    with pytest.raises(ExpressionError, match="unknown identifier"):
        parse_expression("x + y")
    with pytest.raises(ExpressionError, match="unknown function"):
        parse_expression("foo(x)")


def test_xi_rejected_with_pointer_to_kernels():
    with pytest.raises(ExpressionError, match="parametric"):
        parse_expression("xi + 1")


def test_arity_mismatch():
    with pytest.raises(ExpressionError, match="exactly one argument"):
        parse_expression("sin(x, t)")


def test_whitespace_insensitive():
    a = parse_expression("1+2*x")
    b = parse_expression(" 1 +  2 * x ")
    assert a.root == b.root


def test_vector_evaluation_broadcasts():
    f = parse_expression("x*t")
    xs = np.linspace(0, 1, 5)
    out = f(xs, 2.0)
    assert out.shape == xs.shape
    np.testing.assert_allclose(out, xs * 2.0)


def test_depends_on():
    assert parse_expression("x + 1").depends_on("x")
    assert not parse_expression("x + 1").depends_on("t")
    assert parse_expression("sin(t)*x").depends_on("t")


# --- round-trip property -----------------------------------------------


def _trees(depth):
    # parse never produces a negative literal (unary minus becomes Neg),
    # so generated leaves are non-negative; Neg covers the sign cases.
    leaf = st.one_of(
        st.floats(min_value=0, max_value=10, allow_nan=False).map(lambda v: Num(float(v))),
        st.sampled_from([Var("x"), Var("t")]),
    )
    if depth == 0:
        return leaf
    sub = _trees(depth - 1)
    return st.one_of(
        leaf,
        sub.map(Neg),
        st.tuples(st.sampled_from("+-*/^"), sub, sub).map(lambda a: BinOp(*a)),
        st.tuples(st.sampled_from(["exp", "log", "sqrt", "sin", "cos", "tanh", "abs"]), sub).map(
            lambda a: Call(*a)
        ),
    )


@settings(max_examples=300, deadline=None)
@given(_trees(6))
def test_unparse_parse_round_trip(tree):
    text = unparse(tree)
    reparsed = parse_expression(text)
    assert reparsed.root == tree
    # equal trees evaluate identically (bit-for-bit) wherever defined
    try:
        expected = parse_expression(text)(1.25, 0.5)
    except EvaluationError:
        return
    assert reparsed(1.25, 0.5) == expected
