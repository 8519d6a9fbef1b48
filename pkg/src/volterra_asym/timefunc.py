"""Deterministic time functions used as forcing, noise intensity and initial data.

Three flavours share one small interface (``__call__``, ``shape``, ``tilted``):

* :class:`ExpPolyFunction` -- finite sums of ``C t^p e^{gamma t} trig(beta t)``;
  closed under tilting and squaring, which gives closed-form intensity checks.
* :class:`Tabulated` -- values on a grid with linear interpolation.
* :class:`CallableFunction` -- any vectorised Python callable (e.g. a parsed
  expression).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "FunctionTerm",
    "ExpPolyFunction",
    "Tabulated",
    "CallableFunction",
    "constant",
    "function_from_json",
    "function_to_json",
]


@dataclass(frozen=True, eq=False)
class FunctionTerm:
    coeff: np.ndarray
    degree: int = 0
    rate: float = 0.0
    freq: float = 0.0
    phase: str = "cos"

    def __post_init__(self):
        arr = np.array(self.coeff, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "coeff", arr)
        if self.phase not in ("cos", "sin"):
            raise ValueError("phase must be 'cos' or 'sin'")
        if self.freq == 0 and self.phase == "sin":
            raise ValueError("freq = 0 with phase 'sin' is identically zero")

    def complex_form(self):
        """(complex coefficient, degree, exponent) with term = Re(c t^p e^{z t})."""
        c = self.coeff.astype(complex) if self.phase == "cos" else -1j * self.coeff
        return c, self.degree, complex(self.rate, self.freq)


class _Base:
    shape: tuple

    def tilted(self, a: float):
        """``t -> e^{-a t} f(t)``."""
        if a == 0:
            return self
        base = self
        return CallableFunction(lambda t: _expand(np.exp(-a * np.asarray(t, float)), base.shape) * base(t), self.shape)

    def scaled(self, c: float):
        base = self
        return CallableFunction(lambda t: c * base(t), self.shape)


def _expand(w, shape):
    w = np.asarray(w)
    return w.reshape(w.shape + (1,) * len(shape))


@dataclass(frozen=True, eq=False)
class ExpPolyFunction(_Base):
    shape: tuple
    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(self.shape))
        object.__setattr__(self, "terms", tuple(self.terms))
        for t in self.terms:
            if t.coeff.shape != self.shape:
                raise ValueError(f"term shape {t.coeff.shape} != {self.shape}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + self.shape)
        for term in self.terms:
            trig = np.cos if term.phase == "cos" else np.sin
            prof = t**term.degree * np.exp(term.rate * t) * trig(term.freq * t)
            out = out + _expand(prof, self.shape) * term.coeff
        return out

    def tilted(self, a: float) -> "ExpPolyFunction":
        if a == 0:
            return self
        return ExpPolyFunction(
            self.shape,
            tuple(FunctionTerm(t.coeff, t.degree, t.rate - a, t.freq, t.phase) for t in self.terms),
        )

    def scaled(self, c: float) -> "ExpPolyFunction":
        return ExpPolyFunction(
            self.shape,
            tuple(FunctionTerm(c * t.coeff, t.degree, t.rate, t.freq, t.phase) for t in self.terms),
        )

    @property
    def is_zero(self) -> bool:
        return all(not np.any(t.coeff) for t in self.terms)

    def max_rate(self) -> float:
        rates = [t.rate for t in self.terms if np.any(t.coeff)]
        return max(rates) if rates else -math.inf

    def sq_norm_terms(self):
        """``||f(t)||_F^2`` as a list of scalar (c, p, z) with value Re(sum c t^p e^{z t})."""
        forms = [t.complex_form() for t in self.terms if np.any(t.coeff)]
        out = []
        for c1, p1, z1 in forms:
            for c2, p2, z2 in forms:
                # Re(a)Re(b) = (Re(ab) + Re(a conj b)) / 2, summed over entries
                out.append((0.5 * np.sum(c1 * c2), p1 + p2, z1 + z2))
                out.append((0.5 * np.sum(c1 * np.conj(c2)), p1 + p2, z1 + np.conj(z2)))
        return out


@dataclass(frozen=True, eq=False)
class Tabulated(_Base):
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, float)
        v = np.asarray(self.values, float)
        if t.ndim != 1 or v.shape[0] != t.size or np.any(np.diff(t) <= 0):
            raise ValueError("tabulated function needs increasing times and matching values")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape[1:]

    def __call__(self, t):
        t = np.asarray(t, float)
        flat = self.values.reshape(self.times.size, -1)
        cols = [np.interp(t.ravel(), self.times, flat[:, j]) for j in range(flat.shape[1])]
        return np.stack(cols, axis=-1).reshape(t.shape + self.shape)


@dataclass(frozen=True, eq=False)
class CallableFunction(_Base):
    fn: Callable
    shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(self.shape))

    def __call__(self, t):
        t = np.asarray(t, float)
        val = np.asarray(self.fn(t), dtype=float)
        return np.broadcast_to(val, t.shape + self.shape) if val.shape != t.shape + self.shape else val


def constant(value) -> ExpPolyFunction:
    arr = np.array(value, dtype=float)
    if not np.any(arr):
        return ExpPolyFunction(arr.shape, ())
    return ExpPolyFunction(arr.shape, (FunctionTerm(arr),))


def function_from_json(obj, shape: tuple | None = None):
    """Build a time function from its JSON form.

    Accepted forms: a plain (nested) number list (constant), ``{"terms": [...]}``,
    ``{"expr": "..."}`` / ``{"expr": [[...]]}`` in the kernel grammar with
    variable ``t``, or ``{"table": {"t": [...], "values": [...]}}``.
    """
    from .exprparse import parse_expression

    if obj is None:
        if shape is None:
            raise ValueError("missing function and no shape to build a zero function")
        return ExpPolyFunction(shape, ())
    if isinstance(obj, (int, float, list)):
        return constant(obj)
    if "terms" in obj:
        terms = tuple(
            FunctionTerm(t["coeff"], t.get("degree", 0), t.get("rate", 0.0), t.get("freq", 0.0), t.get("phase", "cos"))
            for t in obj["terms"]
        )
        shp = tuple(obj["shape"]) if "shape" in obj else (terms[0].coeff.shape if terms else shape)
        return ExpPolyFunction(shp, terms)
    if "expr" in obj:
        exprs = obj["expr"]
        arr = np.array(exprs, dtype=object)
        parsed = np.vectorize(lambda e: parse_expression(str(e)), otypes=[object])(arr) if arr.ndim else None
        if arr.ndim == 0:
            single = parse_expression(str(exprs))
            return CallableFunction(lambda t: single.evaluate(t=t), ())

        def fn(t, parsed=parsed):
            vals = [np.broadcast_to(p.evaluate(t=t), np.shape(t)) for p in parsed.ravel()]
            return np.stack(vals, axis=-1).reshape(np.shape(t) + parsed.shape)

        return CallableFunction(fn, arr.shape)
    if "table" in obj:
        return Tabulated(obj["table"]["t"], obj["table"]["values"])
    raise ValueError(f"unrecognised function JSON: {obj!r}")


def function_to_json(fn) -> dict:
    if isinstance(fn, ExpPolyFunction):
        return {
            "shape": list(fn.shape),
            "terms": [
                {"coeff": t.coeff.tolist(), "degree": t.degree, "rate": t.rate, "freq": t.freq, "phase": t.phase}
                for t in fn.terms
            ],
        }
    if isinstance(fn, Tabulated):
        return {"table": {"t": fn.times.tolist(), "values": fn.values.tolist()}}
    return {"callable": repr(fn)}
