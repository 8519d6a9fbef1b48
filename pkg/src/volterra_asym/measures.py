"""Driving measures of the affine equations and their Laplace transforms.

A measure is a finite list of matrix-weighted Dirac atoms plus a finite list
of exponential-polynomial-trigonometric densities

    s -> C * s**p * exp(gamma*s) * cos(beta*s)   (or sin)

living either on the half line [0, inf) (Volterra kind) or on [-tau, 0]
(finite-delay kind).  The class is closed under the transforms used by the
characteristic functions, so every transform below is evaluated in closed
form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "VOLTERRA",
    "DELAY",
    "ExpPolyTerm",
    "Atom",
    "MeasureRep",
    "TransformValue",
    "DomainError",
    "laplace_transform",
    "transform_array",
    "alpha_star",
    "total_variation_transform",
    "poly_exp_integral",
]

VOLTERRA = "volterra"
DELAY = "delay"
_PHASES = ("cos", "sin")


class DomainError(ValueError):
    """Transform requested outside the region where it is finite."""


def _as_matrix(value, dim: int | None = None) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"matrix has dimension {arr.shape[0]}, measure has {dim}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ExpPolyTerm:
    """Density ``matrix * s**degree * exp(rate*s) * trig(freq*s)``."""

    matrix: np.ndarray
    degree: int = 0
    rate: float = 0.0
    freq: float = 0.0
    phase: str = "cos"

    def __post_init__(self):
        object.__setattr__(self, "matrix", _as_matrix(self.matrix))
        if int(self.degree) != self.degree or self.degree < 0:
            raise ValueError("degree must be a nonnegative integer")
        object.__setattr__(self, "degree", int(self.degree))
        if self.phase not in _PHASES:
            raise ValueError(f"phase must be one of {_PHASES}")
        if self.freq < 0:
            raise ValueError("freq must be >= 0")
        if self.freq == 0 and self.phase == "sin":
            raise ValueError("freq = 0 with phase 'sin' is identically zero")
        if not (math.isfinite(self.rate) and math.isfinite(self.freq)):
            raise ValueError("rate and freq must be finite")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def scalar(self, s):
        """Scalar profile ``s**p e^{rate s} trig(freq s)`` (without the matrix)."""
        s = np.asarray(s, dtype=float)
        trig = np.cos if self.phase == "cos" else np.sin
        return s**self.degree * np.exp(self.rate * s) * trig(self.freq * s)

    def to_json(self) -> dict:
        return {
            "matrix": self.matrix.tolist(),
            "degree": self.degree,
            "rate": self.rate,
            "freq": self.freq,
            "phase": self.phase,
        }


@dataclass(frozen=True, eq=False)
class Atom:
    loc: float
    weight: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weight", _as_matrix(self.weight))
        object.__setattr__(self, "loc", float(self.loc))


@dataclass(frozen=True, eq=False)
class TransformValue:
    value: np.ndarray | None
    domain_ok: bool


@dataclass(frozen=True, eq=False)
class MeasureRep:
    """Finite signed matrix measure: atoms plus exp-poly-trig densities.

    ``tau is None`` means the half line [0, inf) (Volterra kind); otherwise
    the support is [-tau, 0] (finite-delay kind).
    """

    dim: int
    atoms: tuple[Atom, ...] = ()
    density: tuple[ExpPolyTerm, ...] = ()
    tau: float | None = None

    def __post_init__(self):
        if not 1 <= self.dim <= 8:
            raise ValueError("dimension must be between 1 and 8")
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "density", tuple(self.density))
        if self.tau is not None:
            if not self.tau > 0:
                raise ValueError("delay tau must be > 0")
            object.__setattr__(self, "tau", float(self.tau))
        for atom in self.atoms:
            if atom.weight.shape[0] != self.dim:
                raise ValueError("atom weight dimension mismatch")
            if self.tau is None and atom.loc < 0:
                raise ValueError("Volterra atoms must sit at locations >= 0")
            if self.tau is not None and not (-self.tau - 1e-12 <= atom.loc <= 0):
                raise ValueError("delay atoms must sit in [-tau, 0]")
        for term in self.density:
            if term.dim != self.dim:
                raise ValueError("density term dimension mismatch")

    @property
    def kind(self) -> str:
        return VOLTERRA if self.tau is None else DELAY

    @property
    def is_zero(self) -> bool:
        return not self.atoms and not self.density

    # construction helpers -------------------------------------------------
    @classmethod
    def volterra(cls, dim, atoms=(), density=()):
        return cls(dim, tuple(_atoms(atoms)), tuple(density), None)

    @classmethod
    def delay(cls, dim, tau, atoms=(), density=()):
        return cls(dim, tuple(_atoms(atoms)), tuple(density), tau)

    def __add__(self, other: "MeasureRep") -> "MeasureRep":
        if self.dim != other.dim or self.tau != other.tau:
            raise ValueError("measures live on different supports")
        return MeasureRep(self.dim, self.atoms + other.atoms, self.density + other.density, self.tau)

    def scaled(self, c: float) -> "MeasureRep":
        atoms = tuple(Atom(a.loc, c * a.weight) for a in self.atoms)
        dens = tuple(
            ExpPolyTerm(c * t.matrix, t.degree, t.rate, t.freq, t.phase) for t in self.density
        )
        return MeasureRep(self.dim, atoms, dens, self.tau)

    def tilted(self, a: float) -> "MeasureRep":
        """Measure driving ``e^{-a t} x(t)`` when ``self`` drives ``x``.

        Volterra: ``e^{-a s} mu(ds) - a delta_0``; delay: ``e^{a s} nu(ds) - a delta_0``.
        """
        if a == 0:
            return self
        sign = -1.0 if self.tau is None else 1.0
        atoms = [Atom(at.loc, at.weight * math.exp(sign * a * at.loc)) for at in self.atoms]
        atoms.append(Atom(0.0, -a * np.eye(self.dim)))
        dens = tuple(
            ExpPolyTerm(t.matrix, t.degree, t.rate + sign * a, t.freq, t.phase) for t in self.density
        )
        return MeasureRep(self.dim, tuple(_merge_atoms(atoms)), dens, self.tau)

    def total_mass(self) -> np.ndarray:
        """``int mu(ds)`` over the support (finite only when the transform at 0 exists)."""
        return laplace_transform(self, 0.0).value

    # lag form --------------------------------------------------------------
    def lag_atoms(self) -> list[tuple[float, np.ndarray]]:
        """Atoms as (lag >= 0, weight) so the drift reads ``sum W X(t - lag)``."""
        if self.tau is None:
            return [(a.loc, a.weight) for a in self.atoms]
        return [(-a.loc, a.weight) for a in self.atoms]

    def lag_kernels(self):
        """Densities rewritten as kernels of the lag ``u`` (drift ``int k(u) X(t-u) du``).

        Yields (matrix, degree, complex exponent lambda, part) with
        ``k(u) = matrix * degree! * part(u**degree/degree! * e^{lambda u})`` where
        part is 're' or 'im'.
        """
        out = []
        for t in self.density:
            if self.tau is None:
                coef, lam = t.matrix, complex(t.rate, t.freq)
            else:
                # s = -u: (-u)^p e^{-gamma u} trig(-beta u)
                sgn = (-1.0) ** t.degree * (-1.0 if t.phase == "sin" else 1.0)
                coef, lam = sgn * t.matrix, complex(-t.rate, t.freq)
            out.append((coef, t.degree, lam, "re" if t.phase == "cos" else "im"))
        return out

    # serialization -------------------------------------------------------
    def to_json(self) -> dict:
        support = "volterra" if self.tau is None else {"delay_tau": self.tau}
        return {
            "dim": self.dim,
            "support": support,
            "atoms": [{"loc": a.loc, "weight": a.weight.tolist()} for a in self.atoms],
            "density": [t.to_json() for t in self.density],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MeasureRep":
        try:
            dim = int(obj["dim"])
            support = obj.get("support", "volterra")
            if support == "volterra":
                tau = None
            elif isinstance(support, dict) and "delay_tau" in support:
                tau = float(support["delay_tau"])
            else:
                raise ValueError(f"unknown support {support!r}")
            atoms = tuple(Atom(a["loc"], a["weight"]) for a in obj.get("atoms", []))
            dens = []
            for d in obj.get("density", []):
                kind = d.get("kind", "exppoly")
                if kind != "exppoly":
                    raise ValueError(f"unsupported density kind {kind!r}")
                dens.append(
                    ExpPolyTerm(
                        d["matrix"],
                        d.get("degree", 0),
                        d.get("rate", 0.0),
                        d.get("freq", 0.0),
                        d.get("phase", "cos"),
                    )
                )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed measure JSON: {exc}") from exc
        return cls(dim, atoms, tuple(dens), tau)


def _atoms(items) -> Iterable[Atom]:
    for it in items:
        yield it if isinstance(it, Atom) else Atom(*it)


def _merge_atoms(atoms: Sequence[Atom]) -> list[Atom]:
    merged: dict[float, np.ndarray] = {}
    for a in atoms:
        merged[a.loc] = merged.get(a.loc, 0.0) + a.weight
    return [Atom(loc, w) for loc, w in merged.items()]


# ---------------------------------------------------------------------------
# closed-form integrals

def poly_exp_integral(p: int, z, a: float, b: float):
    """``int_a^b s**p e^{z s} ds`` for complex ``z`` (array-valued), closed form.

    Uses the Taylor series of the exponential when ``|z| * max(|a|, |b|)`` is
    small (the antiderivative cancels catastrophically there).
    """
    z = np.asarray(z, dtype=complex)
    L = max(abs(a), abs(b))
    out = np.empty(z.shape, dtype=complex)
    small = np.abs(z) * L <= 2.0 + p
    if np.any(small):
        zs = z[small]
        acc = np.zeros(zs.shape, dtype=complex)
        zpow = np.ones(zs.shape, dtype=complex)
        fact = 1.0
        for j in range(200):
            k = p + j + 1
            term = zpow / fact * (b**k - a**k) / k
            acc += term
            if j > 4 and np.all(np.abs(term) <= 1e-17 * (np.abs(acc) + 1e-300)):
                break
            zpow = zpow * zs
            fact *= j + 1
        out[small] = acc
    big = ~small
    if np.any(big):
        zb = z[big]

        def anti(s):
            tot = np.zeros(zb.shape, dtype=complex)
            for k in range(p + 1):
                coef = (-1.0) ** k * math.factorial(p) / math.factorial(p - k)
                tot += coef * s ** (p - k) / zb ** (k + 1)
            return np.exp(zb * s) * tot

        out[big] = anti(b) - anti(a)
    return out


def transform_array(m: MeasureRep, lams) -> np.ndarray:
    """Transform at many points; returns (n, d, d) complex.

    Volterra: ``int e^{-lambda s} mu(ds)``; delay: ``int e^{lambda s} nu(ds)``.
    Points outside the Volterra domain give ``nan``.
    """
    lams = np.atleast_1d(np.asarray(lams, dtype=complex))
    d = m.dim
    out = np.zeros((lams.size, d, d), dtype=complex)
    if m.tau is None:
        for a in m.atoms:
            out += np.exp(-lams * a.loc)[:, None, None] * a.weight
        for t in m.density:
            p = t.degree
            f = math.factorial(p)
            up = f / (lams - complex(t.rate, t.freq)) ** (p + 1)
            if t.freq == 0:
                scal = up
            else:
                dn = f / (lams - complex(t.rate, -t.freq)) ** (p + 1)
                scal = 0.5 * (up + dn) if t.phase == "cos" else (up - dn) / 2j
            out += scal[:, None, None] * t.matrix
        bad = lams.real <= alpha_star(m)
        if np.any(bad):
            out[bad] = np.nan
    else:
        for a in m.atoms:
            out += np.exp(lams * a.loc)[:, None, None] * a.weight
        for t in m.density:
            p = t.degree
            up = poly_exp_integral(p, lams + complex(t.rate, t.freq), -m.tau, 0.0)
            if t.freq == 0:
                scal = up
            else:
                dn = poly_exp_integral(p, lams + complex(t.rate, -t.freq), -m.tau, 0.0)
                scal = 0.5 * (up + dn) if t.phase == "cos" else (up - dn) / 2j
            out += scal[:, None, None] * t.matrix
    return out


def laplace_transform(m: MeasureRep, lam: complex) -> TransformValue:
    """Closed-form transform of ``m`` at a single point ``lam``.

    Examples
    --------
    >>> mu = MeasureRep.volterra(1, atoms=[(0.0, [[-6.0]])],
    ...                          density=[ExpPolyTerm([[-4.0]], rate=-1.0)])
    >>> complex(laplace_transform(mu, 1.0).value[0, 0]).real
    -8.0
    """
    lam = complex(lam)
    if m.tau is None and not lam.real > alpha_star(m):
        return TransformValue(None, False)
    return TransformValue(transform_array(m, [lam])[0], True)


def alpha_star(m: MeasureRep) -> float:
    """Abscissa of convergence of ``int e^{-a s}|mu|(ds)``; ``-inf`` for delay kind."""
    if m.tau is not None or not m.density:
        return -math.inf
    return max(t.rate for t in m.density)


# ---------------------------------------------------------------------------
# total variation

def _abs_profile_integral(term: ExpPolyTerm, c: float, lo: float, hi: float | None, tol: float) -> float:
    """``int |s^p e^{c s} trig(beta s)| ds`` over [lo, hi] (hi None = infinity)."""
    p, beta = term.degree, term.freq
    if hi is None:
        if not c < 0:
            raise DomainError("weighted density is not integrable")
        # envelope tail int_H^inf s^p e^{cs} ds = p!/|c|^{p+1} Q(p+1, |c| H)
        scale = math.factorial(p) / (-c) ** (p + 1)
        H = max(1.0, (p + 1) / -c)
        while scale * special.gammaincc(p + 1, -c * H) > tol * scale:
            H *= 1.5
        if beta == 0:
            return scale
        tail = scale * special.gammaincc(p + 1, -c * H)
        return _abs_profile_integral(term, c, lo, H, tol) + 2.0 / math.pi * tail
    if beta == 0:
        val = poly_exp_integral(p, np.array([c + 0j]), lo, hi)[0].real
        return abs(val)
    offset = 0.5 if term.phase == "cos" else 0.0
    k0 = math.ceil(lo * beta / math.pi - offset)
    k1 = math.floor(hi * beta / math.pi - offset)
    zeros = (np.arange(k0, k1 + 1) + offset) * math.pi / beta
    edges = np.concatenate(([lo], zeros[(zeros > lo) & (zeros < hi)], [hi]))
    z = np.array([complex(c, beta)])
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        v = poly_exp_integral(p, z, float(a), float(b))[0]
        total += abs(v.real if term.phase == "cos" else v.imag)
    return total


def total_variation_transform(m: MeasureRep, a: float, tol: float = 1e-10) -> float:
    """Entrywise-l1 total variation transform.

    Volterra: ``int e^{-a s}|mu|(ds)``; delay: ``int e^{a s}|nu|(ds)``.  Matrix
    weights enter through the sum of absolute entries (an upper bound for the
    total variation in any norm with constant 1).
    """
    total = 0.0
    if m.tau is None:
        if not a > alpha_star(m):
            raise DomainError(f"a={a} must exceed alpha*={alpha_star(m)}")
        for at in m.atoms:
            total += np.abs(at.weight).sum() * math.exp(-a * at.loc)
        for t in m.density:
            total += np.abs(t.matrix).sum() * _abs_profile_integral(t, t.rate - a, 0.0, None, tol)
    else:
        for at in m.atoms:
            total += np.abs(at.weight).sum() * math.exp(a * at.loc)
        for t in m.density:
            total += np.abs(t.matrix).sum() * _abs_profile_integral(t, t.rate + a, -m.tau, 0.0, tol)
    return float(total)
