import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from volterra_asym.measures import (
    Atom,
    DomainError,
    ExpPolyTerm,
    MeasureRep,
    alpha_star,
    laplace_transform,
    total_variation_transform,
    transform_array,
)
from volterra_asym.fixtures import EX5_A


def ex4_measure(d=1):
    I = np.eye(d)
    return MeasureRep.volterra(d, atoms=[Atom(0.0, -6 * I)], density=[ExpPolyTerm(-4 * I, rate=-1.0)])


def test_atom_transform():
    mu = MeasureRep.volterra(1, atoms=[Atom(0.0, [[2.5]])])
    tv = laplace_transform(mu, 1.0)
    assert tv.domain_ok and tv.value[0, 0] == pytest.approx(2.5)


@pytest.mark.parametrize("lam", [0.0, 1.0, -0.5 + 2j, 3 - 1j])
def test_example4_transform(lam):
    tv = laplace_transform(ex4_measure(), lam)
    assert tv.domain_ok
    assert complex(tv.value[0, 0]) == pytest.approx(-6 - 4 / (lam + 1), abs=1e-13)


@pytest.mark.parametrize("lam", [0.5, 3.0, 1 + 2j])
def test_example5_transform(lam):
    a = EX5_A
    nu = MeasureRep.delay(1, 1 / 3, atoms=[Atom(0.0, [[a]]), Atom(-1 / 3, [[-a]])])
    val = complex(laplace_transform(nu, lam).value[0, 0])
    assert val == pytest.approx(a - a * np.exp(-lam / 3), abs=1e-12)


def test_alpha_star_values():
    assert alpha_star(ex4_measure()) == -1.0
    assert alpha_star(MeasureRep.volterra(1, atoms=[Atom(0.0, [[1.0]])])) == -math.inf
    assert alpha_star(MeasureRep.delay(1, 1.0, density=[ExpPolyTerm([[1.0]], rate=5.0)])) == -math.inf


def test_domain_flag_around_alpha_star():
    mu = ex4_measure()
    a = alpha_star(mu)
    assert not laplace_transform(mu, a - 0.1).domain_ok
    assert laplace_transform(mu, a - 0.1).value is None
    assert laplace_transform(mu, a + 0.1).domain_ok


def test_total_variation_examples():
    assert total_variation_transform(ex4_measure(), 0.0) == pytest.approx(10.0)
    mu = MeasureRep.volterra(1, atoms=[Atom(0.0, [[-3.0]])])
    for a in (-5.0, 0.0, 7.0):
        assert total_variation_transform(mu, a) == pytest.approx(3.0)


def test_total_variation_trig_density_against_quadrature():
    mu = MeasureRep.volterra(1, density=[ExpPolyTerm([[1.0]], rate=-1.0, freq=1.0)])
    body, _ = integrate.quad(lambda s: abs(math.exp(-s) * math.cos(s)), 0, 40, limit=400)
    tail = math.exp(-40)  # bound on the remaining mass
    assert abs(total_variation_transform(mu, 0.0) - body) <= tail + 1e-9


def test_total_variation_domain_error():
    with pytest.raises(DomainError):
        total_variation_transform(ex4_measure(), -1.5)


def test_rejects_zero_sine_term():
    with pytest.raises(ValueError):
        ExpPolyTerm([[1.0]], freq=0.0, phase="sin")


def test_json_roundtrip():
    mu = MeasureRep.volterra(2, atoms=[Atom(0.5, np.eye(2))], density=[ExpPolyTerm(np.ones((2, 2)), 1, -2.0, 3.0, "sin")])
    back = MeasureRep.from_json(mu.to_json())
    lams = np.array([1.0, 0.3 + 2j])
    assert np.allclose(transform_array(mu, lams), transform_array(back, lams))
    nu = MeasureRep.delay(1, 0.5, atoms=[Atom(-0.5, [[1.0]])])
    assert MeasureRep.from_json(nu.to_json()).tau == 0.5


def test_tilt_shifts_transform():
    mu = ex4_measure()
    a = 0.7
    lam = 0.4 + 1j
    tilted = transform_array(mu.tilted(a), [lam])[0]
    # tilting adds -a delta_0 and shifts the argument by a
    assert np.allclose(tilted, transform_array(mu, [lam + a])[0] - a)


def _rand_measure(draw, dim):
    n_atoms = draw(st.integers(0, 2))
    n_dens = draw(st.integers(0, 2))
    mats = st.lists(st.floats(-3, 3), min_size=dim * dim, max_size=dim * dim)
    atoms = [Atom(draw(st.floats(0, 2)), np.reshape(draw(mats), (dim, dim))) for _ in range(n_atoms)]
    dens = [
        ExpPolyTerm(np.reshape(draw(mats), (dim, dim)), draw(st.integers(0, 2)), draw(st.floats(-3, -0.5)),
                    draw(st.floats(0, 2)), "cos")
        for _ in range(n_dens)
    ]
    return MeasureRep.volterra(dim, atoms=atoms, density=dens)


@st.composite
def measure_pairs(draw):
    dim = draw(st.integers(1, 2))
    return _rand_measure(draw, dim), _rand_measure(draw, dim)


@settings(max_examples=40, deadline=None)
@given(measure_pairs(), st.floats(0.0, 3.0), st.floats(-3.0, 3.0))
def test_transform_is_linear(pair, re, im):
    m1, m2 = pair
    lam = complex(re, im)
    lhs = transform_array(m1 + m2, [lam])[0]
    rhs = transform_array(m1, [lam])[0] + transform_array(m2, [lam])[0]
    assert np.allclose(lhs, rhs, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(measure_pairs(), st.floats(0.0, 3.0))
def test_real_argument_gives_real_value(pair, re):
    m = pair[0]
    val = transform_array(m, [re])[0]
    assert np.max(np.abs(val.imag), initial=0.0) < 1e-12


@settings(max_examples=25, deadline=None)
@given(measure_pairs(), st.floats(0.0, 2.0), st.floats(0.01, 2.0))
def test_total_variation_nonincreasing(pair, a, da):
    m = pair[0]
    assert total_variation_transform(m, a + da) <= total_variation_transform(m, a) + 1e-9
