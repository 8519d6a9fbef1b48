"""Deterministic resolvent, its closed-form leading part and the remainder.

The drift functional of both equation kinds is written in lag form

    D[x](t) = sum_i W_i x(t - l_i) + int_0^U k(u) x(t - u) du,

with ``U = t`` (Volterra) or ``U = tau`` (delay).  Atoms are point lookups
(linear interpolation off-grid); each exp-poly density is carried by a
Markovian lift of ``p + 1`` complex states

    z_m(t) = int_0^U u^m e^{lambda u} / m! x(t - u) du,

which shift exactly from one grid time to the next, with the path treated as
piecewise linear inside each step.  The same engine drives the resolvent
solver here and the Euler-Maruyama path simulator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .charspec import SpectralData
from .measures import DELAY, VOLTERRA, MeasureRep

__all__ = [
    "LagEngine",
    "ResolventGrid",
    "LeadingPart",
    "RateFit",
    "ResolventDecomposition",
    "solve_resolvent",
    "solve_resolvent_direct",
    "leading_part",
    "decompose",
    "delay_step",
    "FIT_TOL",
]

FIT_TOL = 0.05
_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def delay_step(tau: float, h: float) -> float:
    """Largest step ``<= h`` that divides ``tau`` exactly."""
    return tau / math.ceil(tau / h - 1e-9)


def _gl(fn, a: float, b: float):
    """Gauss-Legendre integral of a vectorised ``fn`` over [a, b] (last axis summed)."""
    x = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
    return 0.5 * (b - a) * np.sum(fn(x) * _GL_W, axis=-1)


def _g(m_max: int, lam: complex, u):
    """Rows ``u^m e^{lam u} / m!`` for m = 0..m_max; shape (m_max+1, len(u))."""
    u = np.asarray(u, dtype=float)
    e = np.exp(lam * u)
    return np.stack([u**m / math.factorial(m) * e for m in range(m_max + 1)])


def _shift_matrix(p: int, lam: complex, h: float) -> np.ndarray:
    E = np.zeros((p + 1, p + 1), dtype=complex)
    for m in range(p + 1):
        for j in range(m + 1):
            E[m, j] = np.exp(lam * h) * h ** (m - j) / math.factorial(m - j)
    return E


class LagEngine:
    """Stepper state for ``x' = D[x] + ...`` on a uniform grid.

    ``x`` is a (d, c) array: c = d columns for the resolvent, or one column
    per path for a batch of trajectories.  ``hist`` holds values on the grid
    indices ``-L..-1`` plus, in its last slot, the left limit at 0 (which
    differs from ``x(0)`` for the resolvent).  Volterra equations have a zero
    history.

    All lift states are stacked into one complex array ``z`` of shape
    (rows, d, c) with a block-diagonal shift matrix, so a step costs a fixed
    handful of array operations whatever the number of density terms.
    """

    def __init__(self, measure: MeasureRep, h: float, n_steps: int, x0: np.ndarray, hist: np.ndarray | None = None):
        self.m = measure
        self.h = hh = float(h)
        self.n = int(n_steps)
        x0 = np.asarray(x0, dtype=float)
        d, c = x0.shape
        self.d, self.c = d, c
        self.X = np.empty((self.n + 1, d, c))
        self.X[0] = x0
        self.delay = measure.kind == DELAY
        if self.delay:
            L = int(round(measure.tau / hh))
            if abs(L * hh - measure.tau) > 1e-9 * measure.tau:
                raise ValueError("delay step must divide tau")
            self.L = L
            if hist is None:
                hist = np.zeros((L + 1, d, c))
            if hist.shape != (L + 1, d, c):
                raise ValueError(f"history has shape {hist.shape}, expected {(L + 1, d, c)}")
            self.hist = np.asarray(hist, dtype=float)
        else:
            self.L = 0
            self.hist = np.zeros((1, d, c))
        self._zero = np.zeros((d, c))

        w0 = np.zeros((d, d))
        self.lagged = []
        for lag, W in measure.lag_atoms():
            if not np.any(W):
                continue
            if lag == 0:
                w0 = w0 + W
            else:
                self.lagged.append((lag / hh, W))
        self.W0 = w0 if np.any(w0) else None

        blocks, vecs, readers = [], [], []
        for coef, p, lam, part in measure.lag_kernels():
            if not np.any(coef):
                continue
            a = _gl(lambda u: _g(p, lam, u) * (1 - u / hh), 0.0, hh)
            b = _gl(lambda u: _g(p, lam, u) * (u / hh), 0.0, hh)
            if self.delay:
                tau = measure.tau
                c_ = _gl(lambda v: _g(p, lam, v) * ((tau - v) / hh), tau - hh, tau)
                e_ = _gl(lambda v: _g(p, lam, v) * ((v - tau + hh) / hh), tau - hh, tau)
            else:
                c_ = e_ = np.zeros(p + 1, dtype=complex)
            blocks.append(_shift_matrix(p, lam, hh))
            vecs.append((a, b, c_, e_))
            rd = np.zeros((p + 1, d, d), dtype=complex)
            # Re(-i z) = Im(z)
            rd[p] = math.factorial(p) * np.asarray(coef, float) * (1.0 if part == "re" else -1j)
            readers.append(rd)
        self.has_lift = bool(blocks)
        if self.has_lift:
            rows = sum(B.shape[0] for B in blocks)
            E = np.zeros((rows, rows), dtype=complex)
            i = 0
            for B in blocks:
                E[i : i + B.shape[0], i : i + B.shape[0]] = B
                i += B.shape[0]
            self.E = E
            a, b, c_, e_ = (np.concatenate(v) for v in zip(*vecs))
            self.la, self.lb = a[:, None, None], b[:, None, None]
            self.lc, self.le = (E @ c_)[:, None, None], (E @ e_)[:, None, None]
            self.reader = np.concatenate(readers)
            self.z = self._initial_lift()

    # history ---------------------------------------------------------------
    def _hist(self, i: int) -> np.ndarray:
        """History value at grid index ``i < 0``."""
        if not self.delay or -i > self.L:
            return self._zero
        return self.hist[self.L + i]

    def _initial_lift(self) -> np.ndarray:
        rows = self.E.shape[0]
        z = np.zeros((rows, self.d, self.c), dtype=complex)
        if not self.delay:
            return z
        # Horner over history intervals [ih, (i+1)h] of the lag, oldest first
        for i in range(self.L - 1, -1, -1):
            upper = self.hist[self.L - i]
            lower = self.hist[self.L - i - 1]
            z = self._shift(z) + self.la * upper + self.lb * lower
        return z

    def _shift(self, z):
        return (self.E @ z.reshape(z.shape[0], -1)).reshape(z.shape)

    # lookups ---------------------------------------------------------------
    def _at(self, i: int, k_known: int, pending, left: bool) -> np.ndarray:
        if i > 0 or (i == 0 and not left):
            return pending if i == k_known + 1 else self.X[i]
        if i == 0:
            return self.hist[self.L] if self.delay else self._zero
        return self._hist(i)

    def _value(self, q: float, k_known: int, pending, left: bool) -> np.ndarray:
        """x at grid position ``q`` (in steps); index ``k_known + 1`` is ``pending``."""
        qi = round(q)
        if abs(q - qi) <= 1e-9 * max(1.0, abs(q)):
            return self._at(int(qi), k_known, pending, left)
        i0 = math.floor(q)
        w = q - i0
        return (1 - w) * self._at(i0, k_known, pending, False) + w * self._at(i0 + 1, k_known, pending, i0 + 1 == 0)

    def drift(self, k: int, z=None, pending=None, left: bool = False) -> np.ndarray:
        """Drift at grid index ``k``; ``left`` takes left limits at kinks."""
        x = pending if pending is not None else self.X[k]
        out = self.W0 @ x if self.W0 is not None else np.zeros((self.d, self.c))
        if self.lagged:
            k_known = k - 1 if pending is not None else k
            for qlag, W in self.lagged:
                out = out + W @ self._value(k - qlag, k_known, pending, left)
        if self.has_lift:
            z = self.z if z is None else z
            out = out + np.einsum("mab,mbc->ac", self.reader, z).real
        return out

    def lift_next(self, k: int, x_next: np.ndarray):
        if not self.has_lift:
            return None
        z = self._shift(self.z) + self.la * x_next + self.lb * self.X[k]
        if self.delay:
            j = k - self.L
            if j + 1 <= 0:
                upper = self.hist[self.L] if j + 1 == 0 else self._hist(j + 1)
                lower = self._hist(j)
            else:
                upper, lower = self.X[j + 1], self.X[j]
            z -= self.lc * upper + self.le * lower
        return z

    def commit(self, k: int, x_next: np.ndarray, z):
        self.X[k + 1] = x_next
        if z is not None:
            self.z = z

    def _check(self, k: int):
        if not np.all(np.isfinite(self.X[k])):
            raise OverflowError(f"nonfinite values at t={k * self.h:.4g}; rerun with a tilt near the growth rate alpha")

    # schemes ---------------------------------------------------------------
    def heun(self, forcing: Callable[[int], np.ndarray] | None = None) -> np.ndarray:
        """Explicit trapezoidal stepping; returns the drift at every grid index."""
        h = self.h
        F = np.empty_like(self.X)
        for k in range(self.n):
            f0 = self.drift(k)
            F[k] = f0
            if forcing is not None:
                f0 = f0 + forcing(k)
            xp = self.X[k] + h * f0
            f1 = self.drift(k + 1, self.lift_next(k, xp), pending=xp, left=True)
            if forcing is not None:
                f1 = f1 + forcing(k + 1)
            xn = self.X[k] + 0.5 * h * (f0 + f1)
            self.commit(k, xn, self.lift_next(k, xn))
            if k % 512 == 511:
                self._check(k + 1)
        self._check(self.n)
        F[self.n] = self.drift(self.n)
        return F


# ---------------------------------------------------------------------------
# resolvent grid

@dataclass(frozen=True, eq=False)
class ResolventGrid:
    """``values[k] = e^{-tilt t_k} r(t_k)`` and the matching derivative.

    With ``tilt = 0`` the arrays are the resolvent itself.
    """

    h: float
    T: float
    values: np.ndarray
    derivative_values: np.ndarray
    tilt: float = 0.0
    kind: str = VOLTERRA

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(self.values.shape[0])

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def untilted(self) -> np.ndarray:
        return np.exp(self.tilt * self.times)[:, None, None] * self.values

    def derivative_untilted(self) -> np.ndarray:
        """``r'`` from the tilted derivative: ``e^{at}(rt' + a rt)``."""
        w = np.exp(self.tilt * self.times)[:, None, None]
        return w * (self.derivative_values + self.tilt * self.values)

    def at(self, t) -> np.ndarray:
        """Linear interpolation of the stored (tilted) values."""
        t = np.atleast_1d(np.asarray(t, float))
        flat = self.values.reshape(self.values.shape[0], -1)
        cols = [np.interp(t, self.times, flat[:, j]) for j in range(flat.shape[1])]
        return np.stack(cols, axis=-1).reshape(t.shape + self.values.shape[1:])


def _grid_size(T: float, h: float) -> int:
    n = int(math.ceil(T / h - 1e-9))
    if n < 1:
        raise ValueError("horizon must cover at least one step")
    return n


def solve_resolvent(m: MeasureRep, h: float, T: float, tilt: float = 0.0) -> ResolventGrid:
    """Resolvent on ``[0, T]`` by Heun stepping with Markovian lifts.

    Parameters
    ----------
    m : MeasureRep
        Driving measure.
    h : float
        Step; for delay measures it is reduced to divide ``tau``.
    T : float
        Horizon (rounded up to a whole number of steps).
    tilt : float
        Solve for ``e^{-tilt t} r(t)`` with the tilted measure; use a value
        near the growth rate when ``alpha T`` is large.

    Examples
    --------
    >>> mu = MeasureRep.volterra(1, atoms=[(0.0, [[-1.0]])])
    >>> g = solve_resolvent(mu, 1e-3, 1.0)
    >>> bool(abs(g.values[-1, 0, 0] - math.exp(-1.0)) < 1e-6)
    True
    """
    if not h > 0:
        raise ValueError("step must be positive")
    if m.kind == DELAY:
        h = delay_step(m.tau, h)
    n = _grid_size(T, h)
    mt = m.tilted(tilt)
    eng = LagEngine(mt, h, n, np.eye(m.dim))
    F = eng.heun()
    return ResolventGrid(h, n * h, eng.X, F, float(tilt), m.kind)


def _interval_weights(coef, p, lam, part, h, j_max):
    """Per-interval product-integration weights of a lag kernel.

    Returns (A, B) of shape (j_max, d, d): interval ``[jh, (j+1)h]`` contributes
    ``A_j x(t - jh) + B_j x(t - (j+1)h)``.
    """
    u0 = h * np.arange(j_max)[:, None]
    x = 0.5 * h * (_GL_X + 1.0)[None, :] + u0
    g = _g(p, lam, x.ravel())[p].reshape(x.shape) * math.factorial(p)
    g = g.real if part == "re" else g.imag
    w = 0.5 * h * _GL_W
    A = np.sum(g * (1 - (x - u0) / h) * w, axis=1)
    B = np.sum(g * ((x - u0) / h) * w, axis=1)
    return A[:, None, None] * coef, B[:, None, None] * coef


def solve_resolvent_direct(m: MeasureRep, h: float, T: float, tilt: float = 0.0) -> ResolventGrid:
    """Brute-force O(n^2) oracle: the same Heun scheme, but every density
    convolution is summed over the full stored history at each step."""
    if m.kind == DELAY:
        h = delay_step(m.tau, h)
    n = _grid_size(T, h)
    mt = m.tilted(tilt)
    d = m.dim
    L = int(round(mt.tau / h)) if mt.kind == DELAY else n
    X = np.zeros((n + 1, d, d))
    X[0] = np.eye(d)
    kernels = [_interval_weights(*kk, h, L) for kk in mt.lag_kernels()]
    atoms = [(lag / h, W) for lag, W in mt.lag_atoms()]

    def val(i, pending, k_known, left):
        if i > 0 or (i == 0 and not left):
            return pending if i == k_known + 1 else X[i]
        return np.zeros((d, d))

    def lookup(q, pending, k_known, left):
        qi = round(q)
        if abs(q - qi) <= 1e-9 * max(1.0, abs(q)):
            return val(int(qi), pending, k_known, left)
        i0 = math.floor(q)
        w = q - i0
        return (1 - w) * val(i0, pending, k_known, False) + w * val(i0 + 1, pending, k_known, i0 + 1 == 0)

    def drift(k, pending=None, left=False):
        k_known = k - 1 if pending is not None else k
        out = np.zeros((d, d))
        for q, W in atoms:
            out += W @ lookup(k - q, pending, k_known, left and q > 0)
        if kernels:
            J = min(L, k)  # intervals reaching back into t >= 0 (earlier ones see a zero history)
            hist = np.concatenate((X[:k], pending[None])) if pending is not None else X[: k + 1]
            upper = hist[k - np.arange(J)]
            lower = hist[k - np.arange(J) - 1]
            for A, B in kernels:
                out += np.einsum("jab,jbc->ac", A[:J], upper) + np.einsum("jab,jbc->ac", B[:J], lower)
        return out

    F = np.empty_like(X)
    for k in range(n):
        f0 = drift(k)
        F[k] = f0
        xp = X[k] + h * f0
        f1 = drift(k + 1, xp, left=True)
        X[k + 1] = X[k] + 0.5 * h * (f0 + f1)
    F[n] = drift(n)
    return ResolventGrid(h, n * h, X, F, float(tilt), m.kind)


# ---------------------------------------------------------------------------
# leading part

@dataclass(frozen=True, eq=False)
class LeadingPart:
    """``S(t) = Re sum_j w_j sum_m K_{j,m} t^m e^{lambda_j t}`` (w = 2 for complex pairs).

    When built from a user-supplied closed form, ``fn(t, tilt)`` is used
    instead and the derivative falls back to a central difference.
    """

    terms: tuple = ()  # (weight, lambda, (K_0, ..., K_n))
    dim: int = 1
    fn: Callable | None = None

    def __call__(self, t, tilt: float = 0.0) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, float))
        if self.fn is not None:
            return np.asarray(self.fn(t, tilt), dtype=float).reshape(t.shape + (self.dim, self.dim))
        out = np.zeros(t.shape + (self.dim, self.dim), dtype=complex)
        for w, lam, Ks in self.terms:
            e = np.exp((lam - tilt) * t)
            for m, K in enumerate(Ks):
                out += (w * t**m * e)[..., None, None] * K
        return out.real

    def derivative(self, t, tilt: float = 0.0) -> np.ndarray:
        """``e^{-tilt t} S'(t)``."""
        t = np.atleast_1d(np.asarray(t, float))
        if self.fn is not None:
            step = 1e-5 * (1.0 + np.abs(t))
            up = self(t + step, tilt) * np.exp(tilt * step)[..., None, None]
            dn = self(t - step, tilt) * np.exp(-tilt * step)[..., None, None]
            return (up - dn) / (2 * step)[..., None, None]
        out = np.zeros(t.shape + (self.dim, self.dim), dtype=complex)
        for w, lam, Ks in self.terms:
            e = np.exp((lam - tilt) * t)
            for m, K in enumerate(Ks):
                coef = lam * t**m + (m * t ** (m - 1) if m else 0.0)
                out += (w * coef * e)[..., None, None] * K
        return out.real

    @property
    def at_zero(self) -> np.ndarray:
        return self(0.0)[0]


def leading_part(sd: SpectralData) -> LeadingPart:
    """Closed-form leading part from every root of the leading cluster.

    >>> from volterra_asym.charspec import CharFunction, spectral_summary, Search
    >>> mu = MeasureRep.volterra(1, atoms=[(0.0, [[0.5]])])
    >>> S = leading_part(spectral_summary(CharFunction(mu), Search(-1, 1, 1)))
    >>> round(float(S(2.0)[0, 0, 0]), 12) == round(math.exp(1.0), 12)
    True
    """
    if sd.closed_form is not None:
        return LeadingPart((), sd.dim, sd.closed_form)
    terms = []
    for i in sd.leading_cluster:
        r = sd.roots[i]
        w = 2.0 if r.conjugate else 1.0
        terms.append((w, r.location, tuple(np.asarray(K) for K in r.laurent)))
    return LeadingPart(tuple(terms), sd.dim)


# ---------------------------------------------------------------------------
# decomposition

@dataclass(frozen=True)
class RateFit:
    rate: float
    bound: float
    passed: bool
    zero: bool
    points: int

    def to_json(self) -> dict:
        return {
            "rate": self.rate if math.isfinite(self.rate) else None,
            "bound": self.bound,
            "passed": self.passed,
            "below_resolution": self.zero,
            "points": self.points,
        }


@dataclass(frozen=True, eq=False)
class ResolventDecomposition:
    grid: ResolventGrid
    leading: LeadingPart
    remainder: np.ndarray  # tilted: e^{-tilt t} R(t)
    remainder_derivative: np.ndarray
    fit: RateFit
    fit_derivative: RateFit
    n: int
    alpha: float

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "n": self.n,
            "tilt": self.grid.tilt,
            "remainder": self.fit.to_json(),
            "remainder_derivative": self.fit_derivative.to_json(),
        }


def _fit_rate(t, norms, ref, floor, power, tilt, bound, min_points=50):
    """Slope of ``log(norm / t^power)`` on the tail half of the grid, plus ``tilt``."""
    tail = t >= 0.5 * t[-1]
    keep = tail & (norms > np.maximum(1e-13 * ref, floor)) & (t > 0)
    if not np.any(norms[tail] > np.maximum(1e-13 * ref, floor)[tail]):
        # nothing above the rounding/discretisation floor: reported as below resolution
        return RateFit(-math.inf, bound, True, True, 0)
    if np.count_nonzero(keep) < min_points:
        raise ValueError(
            f"only {np.count_nonzero(keep)} usable tail points for the remainder fit; lengthen the horizon or refine the step"
        )
    y = np.log(norms[keep]) - power * np.log(t[keep])
    slope = np.polyfit(t[keep], y, 1)[0] + tilt
    return RateFit(float(slope), float(bound), bool(slope <= bound), False, int(np.count_nonzero(keep)))


def decompose(
    grid: ResolventGrid,
    sd: SpectralData,
    fit_tol: float = FIT_TOL,
    error_grid: ResolventGrid | None = None,
) -> ResolventDecomposition:
    """Remainder ``R = r - S`` and its fitted exponential rate.

    The bound is ``alpha - gap/2`` when ``n = 0`` and ``alpha + fit_tol`` for
    ``t^{n-1}``-normalised remainders when ``n >= 1``.  ``error_grid`` (the same
    solve at half the step) supplies a Richardson estimate of the
    discretisation error; remainder points below ten times that estimate are
    excluded from the fit.
    """
    t = grid.times
    a = grid.tilt
    S = leading_part(sd)
    R = grid.values - S(t, a)
    Rd = grid.derivative_values - (S.derivative(t, a) - a * S(t, a))
    nr = np.linalg.norm(R, axis=(1, 2))
    nrd = np.linalg.norm(Rd, axis=(1, 2))
    ref = np.maximum(np.linalg.norm(grid.values, axis=(1, 2)), np.linalg.norm(S(t, a), axis=(1, 2)))
    refd = np.maximum(np.linalg.norm(grid.derivative_values, axis=(1, 2)), 1e-300)
    floor = np.zeros_like(nr)
    floor_d = np.zeros_like(nr)
    if error_grid is not None:
        if abs(error_grid.tilt - a) > 0 or abs(error_grid.h * 2 - grid.h) > 1e-12 * grid.h:
            raise ValueError("error grid must be the same solve at half the step")
        fine = error_grid.values[::2][: t.size]
        fine_d = error_grid.derivative_values[::2][: t.size]
        floor = 10 * np.linalg.norm(grid.values - fine, axis=(1, 2)) * 4 / 3
        floor_d = 10 * np.linalg.norm(grid.derivative_values - fine_d, axis=(1, 2)) * 4 / 3
    n = sd.n
    if n == 0:
        bound = sd.alpha - 0.5 * sd.gap
        fit = _fit_rate(t, nr, ref, floor, 0, a, bound)
        fitd = _fit_rate(t, nrd, refd, floor_d, 0, a, bound)
    else:
        bound = sd.alpha + fit_tol
        fit = _fit_rate(t, nr, ref, floor, n - 1, a, bound)
        fitd = _fit_rate(t, nrd, refd, floor_d, n, a, bound)
    return ResolventDecomposition(grid, S, R, Rd, fit, fitd, n, sd.alpha)
