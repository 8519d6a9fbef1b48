import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volterra_asym.exprparse import ParseError, parse_expression
from volterra_asym.rng import BLOCK, BrownianDriver
from volterra_asym.timefunc import ExpPolyFunction, FunctionTerm, constant, function_from_json, function_to_json


def test_increments_reproducible_and_independent_of_range():
    d = BrownianDriver(3, 17, 0.01, dim=2)
    full = d.increments(BLOCK + 100)
    assert np.array_equal(full, BrownianDriver(3, 17, 0.01, dim=2).increments(BLOCK + 100))
    assert np.array_equal(full[BLOCK - 5:BLOCK + 50], d.increments(55, start=BLOCK - 5))


def test_streams_differ_by_path_and_seed():
    a = BrownianDriver(1, 0, 0.1).increments(50)
    assert not np.allclose(a, BrownianDriver(1, 1, 0.1).increments(50))
    assert not np.allclose(a, BrownianDriver(2, 0, 0.1).increments(50))


def test_coarsened_sums_fine_increments():
    fine = BrownianDriver(5, 2, 1e-3)
    coarse = fine.coarsened(4)
    assert coarse.h == pytest.approx(4e-3)
    assert np.allclose(coarse.increments(30), fine.increments(120).reshape(30, 4, 1).sum(1))
    with pytest.raises(ValueError):
        fine.coarsened(0)


def test_increment_variance():
    z = BrownianDriver(0, 0, 0.25).increments(40000)
    assert np.var(z) == pytest.approx(0.25, rel=0.03)
    assert abs(np.mean(z)) < 4 * 0.5 / math.sqrt(40000)


def test_initial_normals_do_not_reuse_increment_lane():
    d = BrownianDriver(9, 4, 1.0)
    z = d.initial_normals(3)
    assert not np.allclose(z, d.increments(3)[:, 0])


@pytest.mark.parametrize(
    "text,t,s,expected",
    [
        ("exp(-(t-s))", 2.0, 1.0, math.exp(-1.0)),
        ("2^3^2", 0.0, 0.0, 512.0),
        ("-t^2", 3.0, 0.0, -9.0),
        ("pow(cos(pi*s)^2, 3)", 0.0, 1.0, 1.0),
        ("s/(1+t)*exp(-s/2)", 1.0, 2.0, math.exp(-1.0)),
        ("e", 0.0, 0.0, math.e),
        ("1.5e-1*t", 2.0, 0.0, 0.3),
    ],
)
def test_expression_values(text, t, s, expected):
    assert float(parse_expression(text)(t, s)) == pytest.approx(expected)


def test_expression_variables_and_vectorisation():
    ex = parse_expression("t - s")
    assert ex.variables == frozenset({"t", "s"})
    assert np.allclose(ex(np.array([1.0, 2.0]), np.array([0.5, 0.5])), [0.5, 1.5])
    assert parse_expression("exp(-t)").variables == frozenset({"t"})


@pytest.mark.parametrize("bad", ["exp(t", "t +", "foo(t)", "x*t", "pow(t)", "t $ s", ""])
def test_expression_errors(bad):
    with pytest.raises(ParseError):
        parse_expression(bad)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_expression_arithmetic_matches_python(a, b, t):
    ex = parse_expression(f"({a!r})*t + ({b!r}) - t*t/2")
    assert float(ex(t)) == pytest.approx(a * t + b - t * t / 2, abs=1e-9)


def test_timefunction_tilt_and_json():
    f = ExpPolyFunction((1,), (FunctionTerm([2.0], 1, -0.5, 1.0, "sin"),))
    t = np.array([0.3, 1.7])
    assert np.allclose(f.tilted(0.4)(t), np.exp(-0.4 * t)[:, None] * f(t))
    back = function_from_json(function_to_json(f))
    assert np.allclose(back(t), f(t))
    assert constant([0.0]).is_zero
    g = function_from_json({"expr": ["exp(-t)"]})
    assert np.allclose(g(t)[:, 0], np.exp(-t))
