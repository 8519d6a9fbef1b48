import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volterra_asym.fixtures import example5_resolvent, get_fixture
from volterra_asym.measures import Atom, MeasureRep
from volterra_asym.pathsim import (
    SystemSpec,
    deterministic_forcing_conv,
    grid_from_function,
    initial_segment_term,
    simulate_em,
    simulate_em_batch,
    simulate_voc,
    solve_deterministic,
)
from volterra_asym.resolvent import delay_step, solve_resolvent
from volterra_asym.rng import BrownianDriver
from volterra_asym.timefunc import ExpPolyFunction, FunctionTerm, constant


def ou(a=-1.0, s=1.0, x0=0.0):
    return SystemSpec(MeasureRep.volterra(1, atoms=[Atom(0.0, [[a]])]), constant([[s]]), x0=[x0])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(0.1, 2.0))
def test_em_exact_for_zero_measure(seed, x0, s):
    spec = SystemSpec(MeasureRep.volterra(1), constant([[s]]), x0=[x0])
    p = simulate_em(spec, BrownianDriver(seed, 0, 0.05), 1.0)
    expected = x0 + s * np.concatenate(([0.0], np.cumsum(p.increments[:, 0])))
    assert np.allclose(p.values[:, 0], expected, atol=1e-12)


def test_same_driver_same_path():
    spec = get_fixture("example3").spec
    a = simulate_em(spec, BrownianDriver(11, 3, 1e-2, 2), 2.0)
    b = simulate_em(spec, BrownianDriver(11, 3, 1e-2, 2), 2.0)
    assert np.array_equal(a.values, b.values)


def test_batch_matches_single_paths():
    spec = get_fixture("example1").spec
    drivers = [BrownianDriver(2, i, 1e-2, 2) for i in range(4)]
    X = simulate_em_batch(spec, drivers, 1.0)
    for i, dr in enumerate(drivers):
        assert np.allclose(X[:, :, i], simulate_em(spec, dr, 1.0).values)


def test_zero_noise_reduces_to_deterministic():
    spec = get_fixture("example4").spec
    quiet = SystemSpec(spec.measure, constant([[0.0]]), x0=spec.x0)
    em = simulate_em(quiet, BrownianDriver(0, 0, 1e-3), 3.0).values[:, 0]
    det = solve_deterministic(quiet, 1e-3, 3.0)[:, 0]
    t = 1e-3 * np.arange(em.size)
    exact = -np.exp(-2 * t) / 3 + 4 / 3 * np.exp(-5 * t)
    assert np.max(np.abs(det - exact)) < 1e-5
    assert np.max(np.abs(em - exact)) < 1e-2


def test_delay_constant_history_is_stationary():
    # x' = a (x(t) - x(t - 1/3)) keeps a constant initial segment constant
    spec = get_fixture("example5").spec
    quiet = SystemSpec(spec.measure, constant([[0.0]]), phi=spec.phi)
    h = delay_step(1 / 3, 1e-2)
    assert np.allclose(solve_deterministic(quiet, h, 2.0), 1.0, atol=1e-9)
    # the VoC route reaches 1 as a difference of two terms of size |r| ~ e^{3t};
    # its error relative to |r| is second order in h
    errs = []
    for h0 in (5e-3, 2.5e-3):
        h = delay_step(1 / 3, h0)
        grid = solve_resolvent(quiet.measure, h, 2.0)
        voc = simulate_voc(quiet, BrownianDriver(0, 0, h), grid).values[:, 0]
        errs.append(np.max(np.abs(voc - 1.0) / np.abs(grid.values[:, 0, 0])))
    assert errs[1] < 5e-5
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_delay_step_must_divide_tau():
    spec = get_fixture("example5").spec
    with pytest.raises(ValueError):
        simulate_em(spec, BrownianDriver(0, 0, 0.1), 1.0)


def test_ou_moments():
    spec = ou(-1.0, 1.0, 0.5)
    drivers = [BrownianDriver(21, i, 1e-2) for i in range(4000)]
    X = simulate_em_batch(spec, drivers, 1.0)[-1, 0]
    mean, var = 0.5 * math.exp(-1), (1 - math.exp(-2)) / 2
    se = math.sqrt(var / X.size)
    assert abs(X.mean() - mean) < 4 * se + 5e-3
    assert X.var() == pytest.approx(var, rel=0.08)
    # Gaussian: excess kurtosis near zero
    z = (X - X.mean()) / X.std()
    assert abs(np.mean(z**4) - 3) < 0.3


def test_forcing_convolution_resonant():
    # r(t) = e^{a t}, f(t) = e^{a t}: int_0^t r(t-s) f(s) ds = t e^{a t}
    a = 0.4
    grid = grid_from_function(lambda t: np.exp(a * t)[:, None, None], 1, 1e-3, 2.0)
    f = ExpPolyFunction((1,), (FunctionTerm([1.0], 0, a),))
    out = deterministic_forcing_conv(grid, f)[:, 0]
    t = grid.times
    assert np.max(np.abs(out - t * np.exp(a * t))) < 1e-5


def test_voc_matches_em_on_shared_increments():
    spec = get_fixture("example3").spec
    fine = BrownianDriver(4, 0, 5e-4, 2)
    grid = solve_resolvent(spec.measure, 1e-3, 2.0)
    voc = simulate_voc(spec, fine.coarsened(2), grid).values
    em_c = simulate_em(spec, fine.coarsened(2), 2.0).values
    em_f = simulate_em(spec, fine, 2.0).values[::2]
    gap_c = np.max(np.abs(em_c - voc))
    gap_f = np.max(np.abs(em_f - voc))
    assert gap_c < 0.05
    assert gap_f < gap_c


def test_initial_segment_term_against_method_of_steps():
    # phi = 1 and no noise: X = r(t) phi(0) + segment term must be identically 1
    spec = get_fixture("example5").spec
    h = delay_step(1 / 3, 1e-3)
    grid = grid_from_function(example5_resolvent, 1, h, 1.5, kind="delay")
    seg = initial_segment_term(grid, spec.measure, spec.phi)[:, 0]
    r = grid.values[:, 0, 0]
    assert np.max(np.abs(r + seg - 1.0) / np.abs(r)) < 2e-6


def test_tilted_simulation_consistent():
    spec = get_fixture("example1").spec
    dr = BrownianDriver(8, 1, 1e-2, 2)
    plain = simulate_em(spec, dr, 2.0)
    tilted = simulate_em(spec, dr, 2.0, tilt=0.3)
    assert np.allclose(tilted.untilted(), plain.values, atol=2e-2)


def test_spec_json_roundtrip():
    spec = get_fixture("example5").spec
    back = SystemSpec.from_json(spec.to_json())
    assert back.kind == "delay" and back.measure.tau == pytest.approx(1 / 3)
    assert np.allclose(back.sigma(np.array([1.0])), spec.sigma(np.array([1.0])))


def test_spec_validation():
    mu = MeasureRep.volterra(2)
    with pytest.raises(ValueError):
        SystemSpec(mu, constant([[1.0]]))
    with pytest.raises(ValueError):
        SystemSpec(mu, constant(np.eye(2)), x0_cov=[[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(ValueError):
        SystemSpec(MeasureRep.delay(1, 1.0, atoms=[Atom(-1.0, [[1.0]])]), constant([[1.0]]))


def test_random_initial_value_covariance():
    spec = SystemSpec(MeasureRep.volterra(2), constant(np.zeros((2, 2))), x0=[1.0, 0.0],
                      x0_cov=[[2.0, 0.5], [0.5, 1.0]])
    draws = np.stack([spec.initial_value(BrownianDriver(3, i, 1.0, 2)) for i in range(20000)])
    assert np.allclose(draws.mean(0), [1.0, 0.0], atol=0.05)
    assert np.allclose(np.cov(draws.T), spec.x0_cov, atol=0.08)
