import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volterra_asym.admissibility import (
    FAIL,
    PASS,
    KernelProbe,
    check_as_conditions,
    check_msq_condition,
    empirical_convergence,
    fit_growth,
    moment_average_curve,
)
from volterra_asym.exprparse import ParseError

GRID = np.logspace(0, 2, 21)


def test_limit_kernel_equal_to_kernel_passes():
    probe = KernelProbe.from_expressions("exp(-s)", "exp(-s)")
    res = check_as_conditions(probe, GRID)
    assert res["msq"].verdict == PASS
    assert res["verdict"] == PASS
    assert np.allclose(res["msq"].values, 0.0)


def test_moving_kernel_fails_msq_with_value_half():
    probe = KernelProbe.from_expressions("exp(-(t-s))")
    c = check_msq_condition(probe, GRID)
    assert c.verdict == FAIL
    assert c.values[-1] == pytest.approx(0.5 * (1 - math.exp(-2 * 100)), rel=1e-6)
    res = check_as_conditions(probe, GRID)
    assert res["verdict"] == FAIL and res["necessary_failed"]


def test_decaying_kernel_passes_msq():
    # int_0^t e^{-2t} ds = t e^{-2t} -> 0
    c = check_msq_condition(KernelProbe.from_expressions("exp(-t)"), GRID)
    assert c.verdict == PASS
    assert c.values[0] == pytest.approx(math.exp(-2), rel=1e-7)


def test_constant_kernel_fails():
    c = check_msq_condition(KernelProbe.from_expressions("1"), GRID)
    assert c.verdict == FAIL



def test_spike_kernel_needs_window_sums():
    # diagonal is e^{s} at integers but only spikes there: pointwise bound
    # fails while the integer-window sums vanish
    k = "exp(s)*pow(cos(pi*s)^2, exp(6*s))"
    probe = KernelProbe.from_expressions(k, k)
    res = check_as_conditions(probe, GRID)
    assert res["msq"].verdict == PASS
    assert res["diagonal"].verdict == FAIL
    assert res["spikes"].verdict == PASS
    assert res["verdict"] == PASS


def test_h1_difference_matches_analytic():
    probe = KernelProbe.from_expressions("exp(-(t-s))")
    s = np.array([0.0, 0.5, 1.9])
    assert np.allclose(probe.h1(2.0, s).ravel(), -np.exp(-(2.0 - s)), rtol=1e-6)
    explicit = KernelProbe.from_expressions("exp(-(t-s))", H1="-exp(-(t-s))")
    assert np.allclose(explicit.h1(2.0, s).ravel(), -np.exp(-(2.0 - s)))


def test_h_inf_must_not_depend_on_t():
    with pytest.raises(ValueError):
        KernelProbe.from_expressions("exp(-s)", "exp(-t)")
    with pytest.raises(ParseError):
        KernelProbe.from_expressions("exp(-s")


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.1, 10.0))
def test_fit_growth_recovers_power(q, c):
    t = np.logspace(0, 3, 40)
    fit = fit_growth(t, c * (1 + t) ** (2 * q))
    assert fit["q"] == pytest.approx(q, abs=1e-6)
    assert fit["c_q"] == pytest.approx(c, rel=1e-6)
    assert fit["polynomial"]


def test_fit_growth_flags_exponential():
    t = np.logspace(0, 2.5, 40)
    assert not fit_growth(t, np.exp(t))["polynomial"]


@pytest.mark.parametrize("j", [0, 1, 2])
def test_moment_average_vanishes(j):
    # t^{-j} int_0^t s^j e^{-s} ds -> j! t^{-j}; the j = 0 case tends to 1
    c = moment_average_curve(lambda s: math.exp(-s), j, np.logspace(0, 4, 17))
    if j == 0:
        assert c.verdict == FAIL
        assert c.values[-1] == pytest.approx(1.0, rel=1e-6)
    else:
        assert c.verdict == PASS
        assert c.values[-1] == pytest.approx(math.factorial(j) / 1e4**j, rel=1e-4)


def test_empirical_slowly_settling_kernel():
    # t-dependence through 1/(1+t) only: gap second moment ~ t^{-2}
    probe = KernelProbe.from_expressions("s/(1+t)*exp(-s/2)")
    rep = empirical_convergence(probe, paths=1000, T=20.0, h=1e-2, seed=3)
    assert rep.verdict == PASS
    assert rep.slope < -1.0


def test_empirical_l2_convolution_kernel():
    probe = KernelProbe.from_expressions("exp(-(t-s))*exp(-s/2)")
    rep = empirical_convergence(probe, paths=1000, T=20.0, h=1e-2, seed=4)
    assert rep.vote >= 0.9
    assert rep.verdict == PASS


def test_empirical_agrees_with_theory_and_isometry():
    probe = KernelProbe.from_expressions("exp(-(t-s))")
    theory = check_msq_condition(probe, GRID).verdict
    rep = empirical_convergence(probe, paths=1000, T=20.0, h=1e-2, seed=5, theory=theory)
    assert rep.verdict == FAIL and rep.consistent
    # Monte Carlo second moment against the discrete isometry
    assert np.all(np.abs(rep.ms_gap - rep.ms_gap_exact) <= 5 * rep.ms_gap_se)


def test_empirical_is_seed_deterministic():
    probe = KernelProbe.from_expressions("exp(-t)")
    a = empirical_convergence(probe, paths=200, T=5.0, seed=9)
    b = empirical_convergence(probe, paths=200, T=5.0, seed=9)
    assert np.array_equal(a.ms_gap, b.ms_gap)
