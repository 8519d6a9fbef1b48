"""Sample paths of the affine stochastic equations.

Two independent constructions consume the same Brownian increments:

* :func:`simulate_em` steps the written dynamics (Euler-Maruyama, with the
  drift functional evaluated by the Markovian-lift engine);
* :func:`simulate_voc` assembles the variation-of-constants formula from a
  resolvent grid (left-point Ito sums and discrete convolutions).

Both accept a tilt ``a`` and then work with ``e^{-a t} X(t)``, which solves the
same kind of equation with tilted measure, forcing, noise and initial segment.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .measures import DELAY, VOLTERRA, MeasureRep
from .resolvent import LagEngine, ResolventGrid
from .rng import BrownianDriver
from .timefunc import ExpPolyFunction, constant, function_from_json, function_to_json

__all__ = [
    "SystemSpec",
    "SimPath",
    "simulate_em",
    "simulate_em_batch",
    "simulate_voc",
    "deterministic_forcing_conv",
    "initial_segment_term",
    "causal_conv",
    "grid_from_function",
    "solve_deterministic",
]


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """``dX = (f(t) + D[X](t)) dt + Sigma(t) dB(t)`` with its initial data.

    Volterra kind: ``x0`` (mean) and optional ``x0_cov`` for a Gaussian start.
    Delay kind: ``phi`` on ``[-tau, 0]``.  ``frame_tilt`` records the tilt
    already applied (``0`` for the original system).
    """

    measure: MeasureRep
    sigma: object
    f: object = None
    x0: np.ndarray | None = None
    x0_cov: np.ndarray | None = None
    phi: object = None
    frame_tilt: float = 0.0

    def __post_init__(self):
        d = self.measure.dim
        if self.f is None:
            object.__setattr__(self, "f", ExpPolyFunction((d,), ()))
        if len(self.sigma.shape) != 2 or self.sigma.shape[0] != d:
            raise ValueError(f"sigma must have shape (d, d'), got {self.sigma.shape}")
        if tuple(self.f.shape) != (d,):
            raise ValueError(f"f must have shape ({d},), got {self.f.shape}")
        if self.kind == VOLTERRA:
            x0 = np.zeros(d) if self.x0 is None else np.asarray(self.x0, float).reshape(d)
            object.__setattr__(self, "x0", x0)
            if self.x0_cov is not None:
                cov = np.asarray(self.x0_cov, float).reshape(d, d)
                if not np.allclose(cov, cov.T) or np.min(np.linalg.eigvalsh(cov)) < -1e-12:
                    raise ValueError("x0_cov must be symmetric positive semidefinite")
                object.__setattr__(self, "x0_cov", cov)
        else:
            if self.phi is None:
                raise ValueError("delay systems need an initial segment phi")
            if tuple(self.phi.shape) != (d,):
                raise ValueError(f"phi must have shape ({d},)")
            s = np.linspace(-self.measure.tau, 0.0, 257)
            vals = self.phi(s)
            if not np.all(np.isfinite(vals)):
                raise ValueError("phi is not finite on [-tau, 0]")
            jump = np.max(np.abs(np.diff(vals, axis=0)))
            scale = 1.0 + np.max(np.abs(vals))
            if jump > 0.25 * scale:
                raise ValueError("phi looks discontinuous on the sampled grid")

    @property
    def kind(self) -> str:
        return self.measure.kind

    @property
    def d(self) -> int:
        return self.measure.dim

    @property
    def d_noise(self) -> int:
        return self.sigma.shape[1]

    @property
    def start(self) -> np.ndarray:
        """Mean of ``X(0)``."""
        return self.x0 if self.kind == VOLTERRA else np.asarray(self.phi(np.array([0.0]))[0], float)

    def tilted(self, a: float) -> "SystemSpec":
        if a == 0:
            return self
        return replace(
            self,
            measure=self.measure.tilted(a),
            sigma=self.sigma.tilted(a),
            f=self.f.tilted(a),
            phi=self.phi.tilted(a) if self.phi is not None else None,
            frame_tilt=self.frame_tilt + a,
        )

    def initial_value(self, driver: BrownianDriver | None = None) -> np.ndarray:
        if self.x0_cov is None or driver is None:
            return self.start.copy()
        w, V = np.linalg.eigh(self.x0_cov)
        root = V * np.sqrt(np.clip(w, 0.0, None))
        return self.start + root @ driver.initial_normals(self.d)

    def history(self, h: float) -> np.ndarray:
        """Initial segment on the grid ``-L h .. 0`` (last slot is ``phi(0)``)."""
        L = int(round(self.measure.tau / h))
        s = h * np.arange(-L, 1)
        return np.asarray(self.phi(s), float)

    # serialization -------------------------------------------------------
    @classmethod
    def from_json(cls, obj: dict) -> "SystemSpec":
        try:
            measure = MeasureRep.from_json(obj["measure"])
            d = measure.dim
            sigma = function_from_json(obj["sigma"])
            if len(sigma.shape) == 1:
                raise ValueError("sigma must be a matrix (d x d')")
            f = function_from_json(obj.get("f"), (d,))
            x0 = x0_cov = phi = None
            init = obj.get("x0")
            if isinstance(init, dict):
                x0, x0_cov = init.get("mean"), init.get("cov")
            else:
                x0 = init
            if "phi" in obj:
                phi = function_from_json(obj["phi"], (d,))
        except KeyError as exc:
            raise ValueError(f"system spec missing key {exc}") from exc
        return cls(measure, sigma, f, x0, x0_cov, phi)

    def to_json(self) -> dict:
        out = {"measure": self.measure.to_json(), "sigma": function_to_json(self.sigma), "f": function_to_json(self.f)}
        if self.kind == VOLTERRA:
            out["x0"] = self.x0.tolist() if self.x0_cov is None else {"mean": self.x0.tolist(), "cov": self.x0_cov.tolist()}
        else:
            out["phi"] = function_to_json(self.phi)
        return out


@dataclass(frozen=True, eq=False)
class SimPath:
    """One trajectory ``values[k] = e^{-tilt t_k} X(t_k)`` and its increments."""

    spec: SystemSpec
    driver: BrownianDriver
    h: float
    values: np.ndarray
    increments: np.ndarray
    tilt: float = 0.0
    method: str = "em"

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(self.values.shape[0])

    def untilted(self) -> np.ndarray:
        return np.exp(self.tilt * self.times)[:, None] * self.values


def _steps(h: float, T: float, spec: SystemSpec) -> int:
    if spec.kind == DELAY:
        L = spec.measure.tau / h
        if abs(L - round(L)) > 1e-9 * L:
            raise ValueError(f"step {h} does not divide tau={spec.measure.tau}; use resolvent.delay_step")
    n = int(math.ceil(T / h - 1e-9))
    if n < 1:
        raise ValueError("horizon must cover at least one step")
    return n


def _em(work: SystemSpec, h: float, n: int, x0: np.ndarray, dB: np.ndarray) -> np.ndarray:
    """Euler-Maruyama for a batch: ``x0`` (d, c), ``dB`` (n, d', c); returns (n+1, d, c)."""
    hist = None
    if work.kind == DELAY:
        hist = np.repeat(work.history(h)[:, :, None], x0.shape[1], axis=2)
    eng = LagEngine(work.measure, h, n, x0, hist)
    t = h * np.arange(n + 1)
    fk = np.asarray(work.f(t), float)
    sk = np.asarray(work.sigma(t), float)
    for k in range(n):
        xn = eng.X[k] + h * (eng.drift(k) + fk[k][:, None]) + sk[k] @ dB[k]
        eng.commit(k, xn, eng.lift_next(k, xn))
        if k % 512 == 511:
            eng._check(k + 1)
    eng._check(n)
    return eng.X


def simulate_em(spec: SystemSpec, driver: BrownianDriver, T: float, tilt: float = 0.0) -> SimPath:
    """Euler-Maruyama path on ``[0, T]`` with the driver's step.

    Examples
    --------
    >>> from volterra_asym.timefunc import constant
    >>> spec = SystemSpec(MeasureRep.volterra(1), constant([[0.0]]), x0=[1.0])
    >>> p = simulate_em(spec, BrownianDriver(1, 0, 0.1), 1.0)
    >>> p.values[-1].tolist()
    [1.0]
    """
    if driver.dim != spec.d_noise:
        raise ValueError("driver dimension does not match sigma")
    h = driver.h
    n = _steps(h, T, spec)
    dB = driver.increments(n)
    work = spec.tilted(tilt)
    X = _em(work, h, n, spec.initial_value(driver)[:, None], dB[:, :, None])
    return SimPath(spec, driver, h, X[:, :, 0], dB, tilt, "em")


def simulate_em_batch(spec: SystemSpec, drivers, T: float, tilt: float = 0.0) -> np.ndarray:
    """Euler-Maruyama for many paths at once; returns (n+1, d, paths)."""
    drivers = list(drivers)
    h = drivers[0].h
    n = _steps(h, T, spec)
    dB = np.stack([dr.increments(n) for dr in drivers], axis=2)
    x0 = np.stack([spec.initial_value(dr) for dr in drivers], axis=1)
    return _em(spec.tilted(tilt), h, n, x0, dB)


def solve_deterministic(spec: SystemSpec, h: float, T: float, tilt: float = 0.0) -> np.ndarray:
    """Noise-free solution by Heun stepping (mean of ``X`` for a fixed start); (n+1, d)."""
    n = _steps(h, T, spec)
    work = spec.tilted(tilt)
    hist = work.history(h)[:, :, None] if work.kind == DELAY else None
    eng = LagEngine(work.measure, h, n, work.start[:, None], hist)
    fk = np.asarray(work.f(h * np.arange(n + 1)), float)
    eng.heun(lambda k: fk[k][:, None])
    return eng.X[:, :, 0]


# ---------------------------------------------------------------------------
# variation of constants

def causal_conv(r: np.ndarray, u: np.ndarray, n: int) -> np.ndarray:
    """``out[k] = sum_{i<=k} r[k-i] @ u[i]`` for k < n; r (m, d, e), u (m', e)."""
    d, e = r.shape[1], r.shape[2]
    out = np.zeros((n, d))
    for a in range(d):
        for b in range(e):
            if np.any(r[:, a, b]) and np.any(u[:, b]):
                out[:, a] += np.convolve(r[:n, a, b], u[:n, b])[:n]
    return out


def deterministic_forcing_conv(grid: ResolventGrid, f, T: float | None = None) -> np.ndarray:
    """Trapezoidal ``int_0^t r(t-s) f(s) ds`` on the grid; returns (n+1, d).

    The grid's tilt is honoured: with ``r`` stored as ``e^{-a t} r(t)`` pass the
    tilted forcing ``e^{-a t} f(t)`` to obtain the tilted convolution.

    >>> from volterra_asym.resolvent import solve_resolvent
    >>> g = solve_resolvent(MeasureRep.volterra(1), 0.1, 1.0)
    >>> float(deterministic_forcing_conv(g, constant([1.0]))[-1, 0])
    1.0
    """
    n = grid.values.shape[0] - 1 if T is None else int(round(T / grid.h))
    h = grid.h
    t = h * np.arange(n + 1)
    fk = np.asarray(f(t), float).reshape(n + 1, -1)
    r = grid.values[: n + 1]
    if not np.any(fk):
        return np.zeros((n + 1, r.shape[1]))
    full = causal_conv(r, fk, n + 1)
    out = h * (full - 0.5 * np.einsum("kab,b->ka", r, fk[0]) - 0.5 * np.einsum("ab,kb->ka", r[0], fk))
    out[0] = 0.0
    return out


def initial_segment_term(grid: ResolventGrid, measure: MeasureRep, phi, n: int | None = None, inner_nodes: int = 129) -> np.ndarray:
    """``int_{-tau}^0 int_{[-tau, u]} r(t + s - u) nu(ds) phi(u) du`` on the grid.

    Written as ``int_0^{min(t, tau)} r(t - v) g(v) dv`` with the history forcing
    ``g(v) = int_{[-tau, -v)} nu(ds) phi(v + s)``; the v-integral is composite
    Simpson on the grid's half-steps (r interpolated linearly at midpoints),
    so every kink of ``r`` and jump of ``g`` falls on a panel boundary.  The
    density part of ``g`` uses an inner Simpson rule with ``inner_nodes``.
    """
    h = grid.h
    tau = measure.tau
    L = int(round(tau / h))
    n = grid.values.shape[0] - 1 if n is None else n
    d = measure.dim
    v_grid = h * np.arange(L + 1)
    v_mid = h * (np.arange(L) + 0.5)

    def g(v, strict: bool):
        v = np.asarray(v, float)
        out = np.zeros(v.shape + (d,))
        for at in measure.atoms:
            lag = -at.loc
            mask = (v < lag - 1e-12 * tau) if strict else (v <= lag + 1e-12 * tau)
            if lag <= 0 or not np.any(mask):
                continue
            vals = np.asarray(phi(np.where(mask, v - lag, 0.0)), float)
            out += mask[:, None] * (vals @ at.weight.T)
        if measure.density:
            frac = np.linspace(0.0, 1.0, inner_nodes)
            for i, vi in enumerate(v):
                width = tau - vi
                if width <= 0:
                    continue
                s = -tau + width * frac
                ph = np.asarray(phi(vi + s), float)
                w = np.full(inner_nodes, 2.0)
                w[1::2] = 4.0
                w[0] = w[-1] = 1.0
                w *= width / (3 * (inner_nodes - 1))
                for term in measure.density:
                    out[i] += term.matrix @ (ph.T @ (w * term.scalar(s)))
        return out

    g_plus = g(v_grid[:-1], strict=True)
    g_minus = g(v_grid[1:], strict=False)
    g_mid = g(v_mid, strict=True)
    A = h / 6 * (g_plus + 2 * g_mid)
    B = h / 6 * (2 * g_mid + g_minus)
    r = grid.values[: n + 1]
    conv_a = causal_conv(r, A, n + 1)
    conv_b = causal_conv(r, B, n + 1)
    out = conv_a.copy()
    k = np.arange(n + 1)
    early = k < L
    out[early] -= np.einsum("ab,kb->ka", r[0], A[k[early]])
    out[1:] += conv_b[:-1]
    return out


def simulate_voc(spec: SystemSpec, driver: BrownianDriver, grid: ResolventGrid, T: float | None = None) -> SimPath:
    """Variation-of-constants path sharing the driver's increments.

    The result is in the grid's tilted frame: ``values[k] = e^{-a t_k} X(t_k)``.
    """
    h = grid.h
    if abs(driver.h - h) > 1e-12 * h:
        raise ValueError(f"driver step {driver.h} does not match resolvent grid step {h}")
    T = grid.T if T is None else T
    n = _steps(h, T, spec)
    if n > grid.values.shape[0] - 1:
        raise ValueError("resolvent grid is shorter than the requested horizon")
    if driver.dim != spec.d_noise:
        raise ValueError("driver dimension does not match sigma")
    work = spec.tilted(grid.tilt)
    r = grid.values[: n + 1]
    dB = driver.increments(n)
    x0 = spec.initial_value(driver)
    X = np.einsum("kab,b->ka", r, x0)
    if spec.kind == DELAY:
        X += initial_segment_term(grid, work.measure, work.phi, n)
    X += deterministic_forcing_conv(grid, work.f, n * h)
    t = h * np.arange(n)
    u = np.einsum("kab,kb->ka", np.asarray(work.sigma(t), float), dB)
    noise = causal_conv(r[1:], u, n)
    X[1:] += noise
    return SimPath(spec, driver, h, X, dB, grid.tilt, "voc")


def grid_from_function(fn, dim: int, h: float, T: float, tilt: float = 0.0, kind: str = VOLTERRA) -> ResolventGrid:
    """Resolvent grid from a closed form ``fn(t) -> (len(t), d, d)`` (tilt applied here)."""
    n = int(math.ceil(T / h - 1e-9))
    t = h * np.arange(n + 1)
    vals = np.asarray(fn(t), float).reshape(n + 1, dim, dim) * np.exp(-tilt * t)[:, None, None]
    step = 1e-6
    lo = np.maximum(t - step, 0.0)
    up = np.asarray(fn(t + step), float).reshape(vals.shape)
    dv = (up - np.asarray(fn(lo), float).reshape(vals.shape)) / (t + step - lo)[:, None, None]
    deriv = np.exp(-tilt * t)[:, None, None] * dv - tilt * vals
    return ResolventGrid(h, n * h, vals, deriv, float(tilt), kind)
