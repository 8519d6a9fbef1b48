import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volterra_asym.fixtures import example5_resolvent, get_fixture
from volterra_asym.measures import Atom, ExpPolyTerm, MeasureRep
from volterra_asym.resolvent import (
    decompose,
    delay_step,
    leading_part,
    solve_resolvent,
    solve_resolvent_direct,
)


def ex4_exact(t):
    return -np.exp(-2 * t) / 3 + 4 / 3 * np.exp(-5 * t)


def test_zero_measure_gives_identity():
    g = solve_resolvent(MeasureRep.volterra(3), 1e-2, 2.0)
    assert np.array_equal(g.values, np.repeat(np.eye(3)[None], g.values.shape[0], 0))
    assert np.all(g.derivative_values == 0)


def test_delay_step_divides_tau():
    h = delay_step(1 / 3, 1e-3)
    assert h <= 1e-3
    assert (1 / 3) / h == pytest.approx(round((1 / 3) / h), abs=1e-9)


def test_example4_accuracy_and_order():
    mu = get_fixture("example4").spec.measure
    errs = []
    for h in (2e-3, 1e-3):
        g = solve_resolvent(mu, h, 10.0)
        errs.append(np.max(np.abs(g.values[:, 0, 0] - ex4_exact(g.times))))
    assert errs[1] < 1e-5
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_example4_derivative():
    mu = get_fixture("example4").spec.measure
    g = solve_resolvent(mu, 1e-3, 5.0)
    t = g.times
    exact = 2 / 3 * np.exp(-2 * t) - 20 / 3 * np.exp(-5 * t)
    assert np.max(np.abs(g.derivative_values[:, 0, 0] - exact)) < 1e-4


def test_example5_against_method_of_steps():
    mu = get_fixture("example5").spec.measure
    g = solve_resolvent(mu, 1e-3, 3.0, tilt=3.0)
    exact = example5_resolvent(g.times)[:, 0, 0] * np.exp(-3.0 * g.times)
    assert np.max(np.abs(g.values[:, 0, 0] - exact)) < 1e-5


def test_tilt_equivalence():
    mu = get_fixture("example4").spec.measure
    g0 = solve_resolvent(mu, 1e-3, 4.0)
    g1 = solve_resolvent(mu, 1e-3, 4.0, tilt=-2.0)
    assert np.allclose(g1.untilted(), g0.values, atol=1e-6)
    assert np.allclose(g1.derivative_untilted(), g0.derivative_values, atol=1e-5)


def test_leading_part_example5(ex5):
    _, sd = ex5
    S = leading_part(sd)
    t = np.array([0.0, 1.0, 2.5])
    assert np.allclose(S(t, 3.0)[:, 0, 0], sd.leading[0].Pstar[0, 0])


@settings(max_examples=12, deadline=None)
@given(st.floats(-2.0, 1.0), st.floats(-3.0, 3.0), st.floats(0.5, 3.0), st.integers(0, 1))
def test_lift_matches_direct_quadrature(a, c, b, p):
    mu = MeasureRep.volterra(1, atoms=[Atom(0.0, [[a]])], density=[ExpPolyTerm([[c]], p, -b)])
    lift = solve_resolvent(mu, 1e-2, 2.0)
    direct = solve_resolvent_direct(mu, 1e-2, 2.0)
    scale = 1 + np.max(np.abs(direct.values))
    assert np.max(np.abs(lift.values - direct.values)) < 1e-4 * scale


@settings(max_examples=10, deadline=None)
@given(st.floats(-1.5, 1.5))
def test_pure_atom_is_matrix_exponential(a):
    A = np.array([[a, 1.0], [0.0, -0.5]])
    mu = MeasureRep.volterra(2, atoms=[Atom(0.0, A)])
    g = solve_resolvent(mu, 1e-3, 1.0)
    from scipy.linalg import expm

    assert np.allclose(g.values[-1], expm(A * g.T), atol=1e-5)


def test_decompose_example4_closed_form(ex4):
    fx, sd = ex4
    mu = fx.spec.measure
    g = solve_resolvent(mu, 1e-3, 8.0, tilt=-2.0)
    fine = solve_resolvent(mu, 5e-4, 8.0, tilt=-2.0)
    dec = decompose(g, sd, error_grid=fine)
    assert dec.fit.passed and dec.fit.rate < -3.5
    t = g.times
    assert np.allclose(dec.remainder[:, 0, 0] * np.exp(-2 * t), 4 / 3 * np.exp(-5 * t), atol=1e-5)


def test_decompose_rejects_mismatched_error_grid(ex4):
    fx, sd = ex4
    g = solve_resolvent(fx.spec.measure, 1e-2, 4.0, tilt=-2.0)
    with pytest.raises(ValueError):
        decompose(g, sd, error_grid=solve_resolvent(fx.spec.measure, 1e-2, 4.0, tilt=-2.0))


FIXTURE_NAMES = ["example1", "example2", "example3", "example4", "example5"]


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_lift_equals_direct_on_fixtures(name):
    mu = get_fixture(name).spec.measure
    lift = solve_resolvent(mu, 1e-2, 3.0)
    direct = solve_resolvent_direct(mu, 1e-2, 3.0)
    assert np.max(np.abs(lift.values - direct.values)) <= 5 * lift.h**2


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_normalised_resolvent_approaches_leading_part(name):
    fx = get_fixture(name)
    sd = fx.spectral()
    T = max(20.0 / sd.gap, 4.0)
    g = solve_resolvent(fx.spec.measure, 2e-3, T, tilt=sd.alpha)
    S = leading_part(sd)
    t = g.times
    norm = np.where(t > 0, t, 1.0) ** sd.n
    # S carries t^n; compare both sides after dividing it out
    resid = np.linalg.norm((g.values - S(t, sd.alpha)) / norm[:, None, None], axis=(1, 2))
    exact = fx.resolvent(t) * np.exp(-sd.alpha * t)[:, None, None]
    exact_resid = np.linalg.norm((exact - S(t, sd.alpha)) / norm[:, None, None], axis=(1, 2))
    iT, iH = t.size - 1, int(np.argmin(np.abs(t - T / 2)))
    if exact_resid[iH] < 1e-12:
        # r is exactly its leading part: only the O(h^2) stepping error remains
        assert resid[iT] < 1e-4
    else:
        assert resid[iT] < resid[iH]


def test_delay_resolvent_ignores_negative_times():
    # r = 0 before time zero, so on [0, tau] only the undelayed atom acts
    a = get_fixture("example5").spec.measure.atoms[0].weight[0, 0]
    g = solve_resolvent(get_fixture("example5").spec.measure, delay_step(1 / 3, 1e-3), 0.3)
    assert np.allclose(g.values[:, 0, 0], np.exp(a * g.times), rtol=1e-5)


def test_example4_forcing_convolution():
    from volterra_asym.pathsim import deterministic_forcing_conv
    from volterra_asym.timefunc import ExpPolyFunction, FunctionTerm

    g = solve_resolvent(get_fixture("example4").spec.measure, 1e-3, 4.0)
    f = ExpPolyFunction((1,), (FunctionTerm([1.0], 0, -3.0),))
    out = deterministic_forcing_conv(g, f)[:, 0]
    t = g.times
    exact = -(np.exp(-2 * t) - np.exp(-3 * t)) / 3 + 2 * (np.exp(-3 * t) - np.exp(-5 * t)) / 3
    assert np.max(np.abs(out - exact)) < 1e-6
