"""Characteristic functions, their zeros and the Laurent data at the zeros.

For a Volterra measure the characteristic function is
``h(lambda) = det(lambda I - int e^{-lambda s} mu(ds))`` (finite for
``Re lambda > alpha*``); for a delay measure it is
``g(lambda) = det(lambda I - int e^{lambda s} nu(ds))``.  Zeros are counted by
the argument principle (phase tracking along box boundaries), isolated by
recursive bisection and polished by Newton's method.  Principal parts of the
inverse characteristic matrix come from trapezoidal contour integrals.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .measures import DELAY, VOLTERRA, DomainError, MeasureRep, alpha_star, total_variation_transform, transform_array

__all__ = [
    "ROOT_TOL",
    "CLUSTER_TOL",
    "CharFunction",
    "Box",
    "Search",
    "Root",
    "LeadingTerm",
    "SpectralData",
    "AlphaNotFound",
    "RootFindError",
    "BoundaryError",
    "eval_char",
    "count_zeros",
    "find_roots",
    "laurent_coeffs",
    "spectral_summary",
    "default_search",
]

ROOT_TOL = 1e-10
CLUSTER_TOL = 1e-7
RANK_TOL = 1e-8
BOUNDARY_TOL = 1e-10
COALESCE_TOL = 1e-7


class RootFindError(RuntimeError):
    pass


class BoundaryError(RootFindError):
    """A zero sits on (or numerically at) the contour."""


class AlphaNotFound(RootFindError):
    """No characteristic zero in the searchable part of the transform domain."""

    def __init__(self, msg: str, diagnostic: dict):
        super().__init__(msg)
        self.diagnostic = diagnostic


@dataclass(frozen=True, eq=False)
class CharFunction:
    measure: MeasureRep

    @property
    def kind(self) -> str:
        return self.measure.kind

    @property
    def dim(self) -> int:
        return self.measure.dim

    @property
    def alpha_star(self) -> float:
        return alpha_star(self.measure)

    def char_matrix(self, lams) -> np.ndarray:
        lams = np.atleast_1d(np.asarray(lams, dtype=complex))
        return lams[:, None, None] * np.eye(self.dim) - transform_array(self.measure, lams)

    def __call__(self, lams) -> np.ndarray:
        return np.linalg.det(self.char_matrix(lams))


def eval_char(cf: CharFunction, lam: complex) -> complex:
    """Determinant of the characteristic matrix at ``lam`` (LU with partial pivoting)."""
    lam = complex(lam)
    if cf.kind == VOLTERRA and not lam.real > cf.alpha_star:
        raise DomainError(f"Re(lambda)={lam.real} outside transform domain (alpha*={cf.alpha_star})")
    return complex(cf([lam])[0])


# ---------------------------------------------------------------------------
# argument principle

@dataclass(frozen=True)
class Box:
    re_min: float
    re_max: float
    im_min: float
    im_max: float

    @property
    def center(self) -> complex:
        return complex(0.5 * (self.re_min + self.re_max), 0.5 * (self.im_min + self.im_max))

    @property
    def width(self) -> float:
        return self.re_max - self.re_min

    @property
    def height(self) -> float:
        return self.im_max - self.im_min

    def contains(self, z: complex, slack: float = 0.0) -> bool:
        return (
            self.re_min - slack <= z.real <= self.re_max + slack
            and self.im_min - slack <= z.imag <= self.im_max + slack
        )

    def shrunk(self, delta: float) -> "Box":
        return Box(self.re_min + delta, self.re_max - delta, self.im_min + delta, self.im_max - delta)

    def corners(self):
        return [
            complex(self.re_min, self.im_min),
            complex(self.re_max, self.im_min),
            complex(self.re_max, self.im_max),
            complex(self.re_min, self.im_max),
        ]


def _winding(cf: CharFunction, box: Box, boundary_tol: float, base_points: int = 64) -> int:
    corners = box.corners()
    total = 0.0
    fmax = 0.0
    edges = []
    for a, b in zip(corners, corners[1:] + corners[:1]):
        s = np.linspace(0.0, 1.0, base_points + 1)
        edges.append([a, b, s, cf(a + s * (b - a))])
    for e in edges:
        fmax = max(fmax, float(np.max(np.abs(e[3]))))
    if not np.isfinite(fmax):
        raise DomainError("characteristic function not finite on the contour")
    for a, b, s, f in edges:
        length = abs(b - a)
        for _ in range(60):
            if np.any(np.abs(f) <= boundary_tol * fmax):
                raise BoundaryError("zero on the contour")
            dphi = np.angle(f[1:] / f[:-1])
            bad = np.abs(dphi) > 0.5 * math.pi
            if not np.any(bad):
                break
            if np.min(np.diff(s)[bad]) * length < 1e-13 * (1.0 + abs(a) + abs(b)):
                raise BoundaryError("phase jump unresolved: zero too close to the contour")
            mids = 0.5 * (s[:-1] + s[1:])[bad]
            fm = cf(a + mids * (b - a))
            s = np.concatenate((s, mids))
            f = np.concatenate((f, fm))
            order = np.argsort(s, kind="stable")
            s, f = s[order], f[order]
        else:
            raise BoundaryError("phase tracking did not converge")
        total += float(np.sum(np.angle(f[1:] / f[:-1])))
    w = total / (2.0 * math.pi)
    k = int(round(w))
    if abs(w - k) > 0.1:
        raise BoundaryError(f"non-integer winding {w}")
    return k


def _count(cf: CharFunction, box: Box, boundary_tol: float = BOUNDARY_TOL, retries: int = 5):
    """Winding count with inward perturbation on boundary hits; returns (count, box)."""
    delta = 1e-6 * (1.0 + max(abs(box.re_min), abs(box.re_max), abs(box.im_min), abs(box.im_max)))
    current = box
    for attempt in range(retries + 1):
        try:
            return _winding(cf, current, boundary_tol), current
        except BoundaryError:
            if attempt == retries:
                raise
            current = box.shrunk(delta * (attempt + 1))
    raise AssertionError("unreachable")


def count_zeros(cf: CharFunction, box: Box, boundary_tol: float = BOUNDARY_TOL) -> int:
    """Number of zeros (with multiplicity) inside ``box`` by the argument principle."""
    if cf.kind == VOLTERRA and not box.re_min > cf.alpha_star:
        raise DomainError("box leaves the transform domain")
    return _count(cf, box, boundary_tol)[0]


# ---------------------------------------------------------------------------
# root location

def _deriv(cf: CharFunction, z: complex) -> complex:
    step = 1e-6 * (1.0 + abs(z))
    vals = cf([z + step, z - step])
    return complex((vals[0] - vals[1]) / (2 * step))


def _newton(cf: CharFunction, z: complex, mult: int = 1, max_iter: int = 100):
    with np.errstate(over="ignore", invalid="ignore"):
        return _newton_iter(cf, z, mult, max_iter)


def _newton_iter(cf: CharFunction, z: complex, mult: int, max_iter: int):
    fz = complex(cf([z])[0])
    for _ in range(max_iter):
        if not np.isfinite(fz):
            return z, math.inf, False
        if fz == 0:
            return z, 0.0, True
        dh = _deriv(cf, z)
        if dh == 0:
            return z, abs(fz), False
        dz = mult * fz / dh
        if not np.isfinite(dz):
            return z, abs(fz), False
        z = z - dz
        fz = complex(cf([z])[0])
        if abs(dz) < 1e-15 * (1.0 + abs(z)):
            break
    return z, abs(fz), abs(fz) < ROOT_TOL


def _locate(cf: CharFunction, box: Box, count: int, depth: int, max_depth: int) -> list:
    if count == 0:
        return []
    z, res, ok = _newton(cf, box.center, mult=count)
    if ok and box.contains(z, slack=1e-9 * (1 + abs(z))):
        if count == 1:
            return [(z, 1)]
        w = 1e-6 * (1.0 + abs(z))
        try:
            c, _ = _count(cf, Box(z.real - w, z.real + w, z.imag - w * 1.01, z.imag + w * 0.99), retries=2)
        except BoundaryError:
            c = -1
        if c == count:
            return [(z, count)]
    if depth >= max_depth:
        raise RootFindError(f"subdivision depth exceeded near {box.center}")
    horizontal = box.width >= box.height
    for frac in (0.5, 0.47, 0.53, 0.44, 0.56, 0.41):
        if horizontal:
            cut = box.re_min + frac * box.width
            kids = [Box(box.re_min, cut, box.im_min, box.im_max), Box(cut, box.re_max, box.im_min, box.im_max)]
        else:
            cut = box.im_min + frac * box.height
            kids = [Box(box.re_min, box.re_max, box.im_min, cut), Box(box.re_min, box.re_max, cut, box.im_max)]
        try:
            counts = [_winding(cf, k, BOUNDARY_TOL) for k in kids]
        except BoundaryError:
            continue
        if sum(counts) != count:
            continue
        out = []
        for k, c in zip(kids, counts):
            out.extend(_locate(cf, k, c, depth + 1, max_depth))
        return out
    raise RootFindError(f"could not split box around {box.center}")


@dataclass(frozen=True, eq=False)
class Root:
    location: complex
    multiplicity: int
    pole_order: int
    laurent: tuple
    residual: float
    conjugate: bool

    @property
    def n(self) -> int:
        return self.pole_order - 1

    def to_json(self) -> dict:
        return {
            "re": self.location.real,
            "im": self.location.imag,
            "multiplicity": self.multiplicity,
            "pole_order": self.pole_order,
            "residual": self.residual,
            "conjugate": self.conjugate,
        }


@dataclass(frozen=True)
class Search:
    re_min: float
    re_max: float
    im_max: float


def default_search(measure: MeasureRep) -> Search:
    """Search box certified to contain every zero with ``Re >= re_min``.

    A zero satisfies ``|lambda| <= ||transform(lambda)|| <= TV(Re lambda)`` and
    the total-variation transform is nonincreasing, which bounds the box.
    """
    a_star = alpha_star(measure)
    if measure.kind == VOLTERRA and math.isfinite(a_star):
        re_min = a_star + 1e-3 * (1.0 + abs(a_star))
    else:
        re_min = -(total_variation_transform(measure, 0.0) + 1.0)
    tv_lo = total_variation_transform(measure, re_min)
    re_max = total_variation_transform(measure, max(re_min, 0.0)) + 1.0
    im_max = 4.0 * (1.0 + tv_lo)
    if im_max > 200.0:
        warnings.warn(f"im_max heuristic {im_max:.1f} capped at 200; leading cluster certified only in the box")
        im_max = 200.0
    if measure.kind == DELAY:
        warnings.warn("delay equations have infinitely many roots; analysis is limited to the search box")
    return Search(re_min, re_max, im_max)


def _radius(z: complex, others: Sequence[complex], a_star: float) -> float:
    dist = [abs(z - o) for o in others if abs(z - o) > COALESCE_TOL]
    rho = 0.25
    if dist:
        rho = min(rho, 0.4 * min(dist))
    if math.isfinite(a_star):
        rho = min(rho, 0.5 * (z.real - a_star))
    return rho


def laurent_coeffs(
    cf: CharFunction,
    root: complex,
    max_m: int,
    radius: float = 0.25,
    nodes: int = 64,
    tol: float = 1e-9,
    max_nodes: int = 4096,
) -> list:
    """Principal-part matrices ``K_m`` (m = 0..max_m) at ``root``.

    ``K_m = (1/m!) (1/2 pi i) oint (lambda - root)^m [char matrix]^{-1} d lambda``,
    evaluated by the trapezoidal rule on a circle and refined by doubling the
    node count until successive answers agree to ``tol``.
    """
    root = complex(root)
    if cf.kind == VOLTERRA and not root.real - radius > cf.alpha_star:
        raise DomainError("Laurent contour leaves the transform domain")

    def once(M):
        offset = 0.0
        for _ in range(3):
            theta = 2 * math.pi * (np.arange(M) + offset) / M
            w = radius * np.exp(1j * theta)
            mats = cf.char_matrix(root + w)
            try:
                inv = np.linalg.inv(mats)
            except np.linalg.LinAlgError:
                offset += 0.5 / 3
                continue
            if np.all(np.isfinite(inv)):
                break
            offset += 0.5 / 3
        else:
            raise RootFindError("characteristic matrix singular on the Laurent contour")
        out = []
        for m in range(max_m + 1):
            acc = np.tensordot(w ** (m + 1), inv, axes=(0, 0)) / M
            out.append(acc / math.factorial(m))
        return out

    prev = once(nodes)
    M = nodes
    while True:
        M *= 2
        cur = once(M)
        scale = max(1.0, max(np.max(np.abs(k)) for k in cur))
        if max(np.max(np.abs(a - b)) for a, b in zip(prev, cur)) <= tol * scale:
            return cur
        if M >= max_nodes:
            raise RootFindError(f"Laurent coefficients did not converge at {root}")
        prev = cur


def _pole_order(K: Sequence[np.ndarray]) -> int:
    norms = [float(np.linalg.norm(k)) for k in K]
    ref = norms[0] if norms[0] > 0 else max(norms)
    nz = [m for m, v in enumerate(norms) if v > RANK_TOL * ref]
    if not nz:
        raise RootFindError("all Laurent coefficients vanish: not a pole")
    return 1 + max(nz)


def find_roots(
    cf: CharFunction,
    search: Search | None = None,
    max_depth: int = 60,
) -> list:
    """All zeros in ``[re_min, re_max] x [-im_max, im_max]``, stored with ``Im >= 0``."""
    search = search or default_search(cf.measure)
    if cf.kind == VOLTERRA and not search.re_min > cf.alpha_star:
        raise DomainError(f"re_min={search.re_min} must exceed alpha*={cf.alpha_star}")
    box = Box(search.re_min, search.re_max, -search.im_max, search.im_max)
    total, box = _count(cf, box)
    found = _locate(cf, box, total, 0, max_depth)
    merged: list = []
    for z, k in found:
        for i, (z2, k2) in enumerate(merged):
            if abs(z - z2) <= COALESCE_TOL * (1.0 + abs(z)):
                merged[i] = (z2, k2 + k)
                break
        else:
            merged.append((z, k))
    if sum(k for _, k in merged) != total:
        raise RootFindError(f"winding-count mismatch: {total} zeros counted, {sum(k for _, k in merged)} located")
    locs = [z for z, _ in merged]
    a_star = cf.alpha_star
    roots = []
    for z, k in merged:
        if z.imag < -1e-9 * (1.0 + abs(z)):
            continue
        if abs(z.imag) <= 1e-9 * (1.0 + abs(z)):
            z = complex(z.real, 0.0)
        K = laurent_coeffs(cf, z, max_m=k + 1, radius=_radius(z, locs, a_star))
        order = _pole_order(K)
        roots.append(
            Root(
                location=z,
                multiplicity=k,
                pole_order=order,
                laurent=tuple(K[:order]),
                residual=abs(complex(cf([z])[0])),
                conjugate=z.imag != 0.0,
            )
        )
    roots.sort(key=lambda r: (-r.location.real, r.location.imag))
    return roots


# ---------------------------------------------------------------------------
# leading data

@dataclass(frozen=True, eq=False)
class LeadingTerm:
    beta: float
    Pstar: np.ndarray
    Qstar: np.ndarray
    P_poly: np.ndarray | None = None  # (n+1, d, d): coefficient of t^m
    Q_poly: np.ndarray | None = None
    pole_order: int | None = None

    def to_json(self) -> dict:
        return {
            "beta": self.beta,
            "Pstar": np.asarray(self.Pstar).tolist(),
            "Qstar": np.asarray(self.Qstar).tolist(),
            "pole_order": self.pole_order,
        }


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Leading asymptotic data ``(alpha, n, beta_j, P*_j, Q*_j)`` and its provenance.

    ``closed_form`` optionally carries a user-supplied leading part ``S(t)``
    (the route for measures where alpha <= alpha*).
    """

    alpha: float
    n: int
    leading: tuple
    gap: float
    alpha_star: float = -math.inf
    roots: tuple = ()
    leading_cluster: tuple = ()
    kind: str = VOLTERRA
    closed_form: object = None

    @property
    def dim(self) -> int:
        return np.asarray(self.leading[0].Pstar).shape[0]

    @classmethod
    def from_closed_form(cls, alpha, n, leading, gap, S=None, kind=VOLTERRA, alpha_star=-math.inf):
        terms = tuple(
            t if isinstance(t, LeadingTerm) else LeadingTerm(float(t[0]), np.atleast_2d(t[1]), np.atleast_2d(t[2]))
            for t in leading
        )
        return cls(float(alpha), int(n), terms, float(gap), alpha_star, (), (), kind, S)

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "alpha_star": self.alpha_star if math.isfinite(self.alpha_star) else None,
            "n": self.n,
            "leading": [t.to_json() for t in self.leading],
            "gap": self.gap,
            "roots": [r.to_json() for r in self.roots],
        }


def spectral_summary(cf: CharFunction, search: Search | None = None) -> SpectralData:
    """Leading cluster, pole degree ``n``, ``P*``/``Q*`` and spectral gap."""
    search = search or default_search(cf.measure)
    a_star = cf.alpha_star
    roots = find_roots(cf, search)
    if cf.kind == VOLTERRA:
        roots = [r for r in roots if r.location.real > a_star]
    if not roots:
        raise AlphaNotFound(
            "no characteristic zero in the searchable transform domain",
            {
                "alpha_star": a_star if math.isfinite(a_star) else None,
                "search": {"re_min": search.re_min, "re_max": search.re_max, "im_max": search.im_max},
                "hint": "alpha <= alpha*: supply a closed-form resolvent (alpha, n, beta, Pstar, Qstar, S) "
                "and use the stochastic-convolution route directly",
            },
        )
    alpha = max(r.location.real for r in roots)
    cluster = [i for i, r in enumerate(roots) if abs(r.location.real - alpha) <= CLUSTER_TOL]
    n = max(roots[i].pole_order - 1 for i in cluster)
    leading = []
    for i in cluster:
        r = roots[i]
        if r.pole_order - 1 != n:
            continue
        K = np.array(r.laurent)
        if r.location.imag == 0.0:
            P, Q = K.real.copy(), np.zeros_like(K.real)
        else:
            P, Q = 2.0 * K.real, -2.0 * K.imag
        leading.append(LeadingTerm(r.location.imag, P[n], Q[n], P, Q, r.pole_order))
    lower = [r.location.real for r in roots if r.location.real < alpha - CLUSTER_TOL]
    nxt = max(lower) if lower else search.re_min
    if cf.kind == VOLTERRA:
        gap = 0.5 * min(alpha - nxt, alpha - a_star)
    else:
        gap = alpha - nxt
    return SpectralData(
        alpha=alpha,
        n=n,
        leading=tuple(leading),
        gap=gap,
        alpha_star=a_star,
        roots=tuple(roots),
        leading_cluster=tuple(cluster),
        kind=cf.kind,
    )
