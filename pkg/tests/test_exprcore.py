import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neuralabs import exprcore as ex
from neuralabs.errors import DomainError, ExprSyntaxError, UnknownVariable, UnsupportedFunction

VARS = ["x", "y"]


def _leaf():
    return st.one_of(st.sampled_from(VARS), st.integers(0, 3).map(str), st.sampled_from(["0.5", "1.25", "2e-1"]))


def _grow(children):
    return st.one_of(
        st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        st.tuples(children, st.integers(0, 3)).map(lambda t: f"({t[0]})^{t[1]}"),
        st.tuples(st.sampled_from(["sin", "cos"]), children).map(lambda t: f"{t[0]}({t[1]})"),
        children.map(lambda c: f"exp(0.3*{c})"),
        children.map(lambda c: f"sqrt(({c})^2 + 1)"),
        children.map(lambda c: f"cbrt({c})"),
        children.map(lambda c: f"(-{c})"),
    )


expressions = st.recursive(_leaf(), _grow, max_leaves=8)


@st.composite
def boxes(draw):
    lo = np.array([draw(st.floats(-2, 2)) for _ in VARS])
    w = np.array([draw(st.floats(0, 1)) for _ in VARS])
    return lo, lo + w


def test_precedence_and_associativity():
    e = ex.parse("2 - 3 - 4 * 5 ^ 2 / 10", VARS)
    assert ex.eval_point(e, [0.0, 0.0]) == pytest.approx(2 - 3 - 4 * 25 / 10)
    assert ex.eval_point(ex.parse("-x^2", VARS), [3.0, 0.0]) == pytest.approx(-9.0)


def test_errors_carry_offsets():
    with pytest.raises(ExprSyntaxError) as info:
        ex.parse("x +", VARS)
    assert "offset 3" in str(info.value)
    with pytest.raises(UnknownVariable):
        ex.parse("x + q", VARS)
    with pytest.raises(UnsupportedFunction):
        ex.parse("tan(x)", VARS)


@given(expressions)
def test_print_parse_round_trip(text):
    e = ex.parse(text, VARS)
    back = ex.parse(ex.to_text(e, VARS), VARS)
    pts = np.random.default_rng(0).uniform(-2, 2, (2, 16))
    np.testing.assert_allclose(ex.eval_point(back, pts), ex.eval_point(e, pts), rtol=1e-12, atol=1e-12)


@given(expressions, boxes())
def test_interval_encloses_samples(text, box):
    e = ex.parse(text, VARS)
    lo, hi = box
    elo, ehi = ex.eval_interval(e, lo, hi)
    X = np.random.default_rng(1).uniform(lo, hi, (200, 2)).T
    vals = np.broadcast_to(ex.eval_point(e, X), (200,))
    finite = np.isfinite(vals)
    assert np.all(vals[finite] >= elo) and np.all(vals[finite] <= ehi)


@given(expressions, st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)))
def test_symbolic_derivative_matches_central_difference(text, point):
    e = ex.parse(text, VARS)
    x = np.array(point)
    h = 1e-6
    for i in range(2):
        d = np.zeros(2)
        d[i] = h
        fd = (ex.eval_point(e, x + d) - ex.eval_point(e, x - d)) / (2 * h)
        try:
            exact = ex.eval_point(ex.diff(e, i), x)
        except DomainError:
            continue  # cbrt is not differentiable at 0
        if not (math.isfinite(fd) and math.isfinite(exact)) or max(abs(fd), abs(exact)) > 1e4:
            continue
        # skip points near a cbrt kink, where the difference quotient is meaningless
        fd2 = (ex.eval_point(e, x + 10 * d) - ex.eval_point(e, x - 10 * d)) / (20 * h)
        if abs(fd - fd2) > 1e-3 * (1 + abs(fd)):
            continue
        assert exact == pytest.approx(fd, rel=1e-4, abs=1e-5)


def test_sqrt_of_negative_box_is_a_domain_error():
    e = ex.parse("sqrt(x)", VARS)
    with pytest.raises(DomainError):
        ex.eval_interval(e, [-1.0, 0.0], [-0.5, 0.0])


def test_cbrt_is_odd_and_real():
    e = ex.parse("cbrt(x)", VARS)
    assert ex.eval_point(e, [-8.0, 0.0]) == pytest.approx(-2.0)
    lo, hi = ex.eval_interval(e, [-8.0, 0.0], [27.0, 0.0])
    assert lo <= -2.0 and hi >= 3.0
