"""Worked example systems with their known spectral data.

Each fixture bundles the system, the spectral search region (or a closed-form
spectral summary when no characteristic zero lies in the transform domain),
an exact resolvent when one is available, and reference values used by the
``fixture`` command to diff a fresh computation against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .charspec import CharFunction, Search, SpectralData, spectral_summary
from .measures import Atom, DELAY, ExpPolyTerm, MeasureRep
from .pathsim import SystemSpec
from .timefunc import ExpPolyFunction, FunctionTerm, constant

__all__ = ["Fixture", "FIXTURES", "get_fixture", "example5_resolvent", "EX5_A", "EX5_PSTAR"]

GAMMA = 0.3
EX5_A = 3.0 / (1.0 - math.exp(-1.0))
EX5_PSTAR = (1.0 - math.exp(-1.0)) / (1.0 - 2.0 * math.exp(-1.0))
J = np.array([[0.0, -1.0], [1.0, 0.0]])


@dataclass(frozen=True, eq=False)
class Fixture:
    name: str
    spec: SystemSpec
    search: Search | None = None
    closed_form: SpectralData | None = None
    resolvent: Callable | None = None  # t -> (len(t), d, d)
    expected: dict = field(default_factory=dict)
    summary: str = ""

    def spectral(self) -> SpectralData:
        if self.closed_form is not None:
            return self.closed_form
        return spectral_summary(CharFunction(self.spec.measure), self.search)


def _exp_noise(d: int, rate: float, scale: float = 1.0) -> ExpPolyFunction:
    return ExpPolyFunction((d, d), (FunctionTerm(scale * np.eye(d), 0, rate),))


def _diag_resolvent(fn, d):
    def r(t):
        t = np.atleast_1d(np.asarray(t, float))
        return fn(t)[:, None, None] * np.eye(d)[None]

    return r


def example1(gamma: float = GAMMA) -> Fixture:
    """``A = gamma I`` (2x2), noise ``e^{(gamma-1)t} I``: limit variance 1/2 per coordinate."""
    mu = MeasureRep.volterra(2, atoms=[Atom(0.0, gamma * np.eye(2))])
    spec = SystemSpec(mu, _exp_noise(2, gamma - 1.0), x0=[1.0, -0.5])
    return Fixture(
        "example1",
        spec,
        Search(-1.0, 1.0 + gamma, 1.0),
        resolvent=_diag_resolvent(lambda t: np.exp(gamma * t), 2),
        expected={"alpha": gamma, "n": 0, "Pstar": np.eye(2).tolist(), "Qstar": np.zeros((2, 2)).tolist(),
                  "variance": [0.5, 0.5]},
        summary="semisimple leading eigenvalue",
    )


def example2(gamma: float = GAMMA) -> Fixture:
    """Jordan block, written in the frame shifted by ``gamma``: drift ``(A - gamma I) Y``."""
    N = np.array([[0.0, 1.0], [0.0, 0.0]])
    mu = MeasureRep.volterra(2, atoms=[Atom(0.0, N)])
    spec = SystemSpec(mu, _exp_noise(2, -1.0), x0=[0.5, 1.0])

    def r(t):
        t = np.atleast_1d(np.asarray(t, float))
        out = np.repeat(np.eye(2)[None], t.size, axis=0)
        out[:, 0, 1] = t
        return out

    return Fixture(
        "example2",
        spec,
        Search(-1.0, 1.5, 1.0),
        resolvent=r,
        expected={"alpha": 0.0, "n": 1, "Pstar": N.tolist(), "Qstar": np.zeros((2, 2)).tolist()},
        summary="defective leading eigenvalue, n = 1",
    )


def example3() -> Fixture:
    """Rotation generator ``J`` (shifted frame): complex pair ``+-i``."""
    mu = MeasureRep.volterra(2, atoms=[Atom(0.0, J)])
    spec = SystemSpec(mu, _exp_noise(2, -1.0), x0=[1.0, 0.0])

    def r(t):
        t = np.atleast_1d(np.asarray(t, float))
        c, s = np.cos(t), np.sin(t)
        return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], 1)

    # G_c, G_s with noise e^{-s} I: E[G_c^2] = int e^{-2s} cos^2 = 3/8, E[G_s^2] = 1/8, E[G_c G_s] = 1/8
    return Fixture(
        "example3",
        spec,
        Search(-1.0, 1.5, 2.0),
        resolvent=r,
        expected={"alpha": 0.0, "n": 0, "beta": 1.0, "Pstar": np.eye(2).tolist(), "Qstar": J.tolist(),
                  "Gcc": 3.0 / 8.0, "Gss": 1.0 / 8.0, "Gcs": 1.0 / 8.0},
        summary="complex leading pair",
    )


def example4(d: int = 1) -> Fixture:
    """``mu = -6 delta_0 - 4 e^{-s} ds``: zeros lie outside the transform domain.

    Noise ``e^{-2t}`` and ``X0 = 1``; the closed-form resolvent
    ``-1/3 e^{-2t} + 4/3 e^{-5t}`` supplies the leading data directly.
    """
    I = np.eye(d)
    mu = MeasureRep.volterra(d, atoms=[Atom(0.0, -6.0 * I)], density=[ExpPolyTerm(-4.0 * I, 0, -1.0)])
    spec = SystemSpec(mu, _exp_noise(d, -2.0), x0=np.ones(d))

    def S(t, tilt=0.0):
        t = np.atleast_1d(np.asarray(t, float))
        return (-np.exp((-2.0 - tilt) * t) / 3.0)[:, None, None] * I[None]

    sd = SpectralData.from_closed_form(-2.0, 0, [(0.0, -I / 3.0, 0.0 * I)], 3.0, S, alpha_star=-1.0)
    return Fixture(
        "example4",
        spec,
        closed_form=sd,
        resolvent=_diag_resolvent(lambda t: -np.exp(-2.0 * t) / 3.0 + 4.0 / 3.0 * np.exp(-5.0 * t), d),
        expected={"alpha": -2.0, "n": 0, "Pstar": (-I / 3.0).tolist(), "alpha_star": -1.0},
        summary="leading data from a closed-form resolvent",
    )


def example5_resolvent(t) -> np.ndarray:
    """Exact resolvent of ``x' = a (x(t) - x(t - 1/3))`` by the method of steps."""
    t = np.atleast_1d(np.asarray(t, float))
    a, tau = EX5_A, 1.0 / 3.0
    out = np.zeros_like(t)
    for k in range(int(np.max(t) / tau) + 1 if t.size else 0):
        u = t - k * tau
        on = u >= 0
        out[on] += (-a) ** k * u[on] ** k / math.factorial(k) * np.exp(a * u[on])
    return out[:, None, None]


def example5() -> Fixture:
    """Delay equation ``dX = a (X(t) - X(t - 1/3)) dt + e^{2.5 t} dB`` with ``phi = 1``."""
    a, tau = EX5_A, 1.0 / 3.0
    nu = MeasureRep.delay(1, tau, atoms=[Atom(0.0, [[a]]), Atom(-tau, [[-a]])])
    spec = SystemSpec(nu, _exp_noise(1, 2.5), phi=constant([1.0]))
    return Fixture(
        "example5",
        spec,
        None,
        resolvent=example5_resolvent,
        expected={"alpha": 3.0, "n": 0, "Pstar": [[EX5_PSTAR]], "Qstar": [[0.0]], "pole_order": 1,
                  "gap": 3.0, "mean": 0.0, "variance": [EX5_PSTAR**2]},
        summary="finite-delay equation with a simple real leading root",
    )


FIXTURES = {
    "example1": example1,
    "example2": example2,
    "example3": example3,
    "example4": example4,
    "example5": example5,
}


def get_fixture(name: str) -> Fixture:
    try:
        return FIXTURES[name]()
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None
