"""Experiment configuration (JSON) for the command-line front end."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .charspec import LeadingTerm, Search, SpectralData
from .fixtures import FIXTURES, get_fixture
from .pathsim import SystemSpec

__all__ = ["SchemaError", "Numerics", "Outputs", "KernelSpec", "ExperimentConfig", "closed_form_from_json"]


class SchemaError(ValueError):
    """The configuration does not match the expected layout."""


def _positive(name: str, value, allow_none: bool = False):
    if value is None and allow_none:
        return
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0 or not math.isfinite(value):
        raise SchemaError(f"{name} must be a positive number, got {value!r}")


@dataclass(frozen=True)
class Numerics:
    step: float = 1e-3
    horizon: float = 10.0
    paths: int = 1000
    seed: int = 0
    method: str = "voc"
    tilt: float | None = None
    checkpoints: int = 33
    tail_tol: float | None = None
    fit_tol: float = 0.05
    ms_tol: float = 1e-3
    t_max: float = 1e3

    def __post_init__(self):
        for name in ("step", "horizon", "fit_tol", "ms_tol", "t_max"):
            _positive(name, getattr(self, name))
        _positive("tail_tol", self.tail_tol, allow_none=True)
        if not isinstance(self.paths, int) or self.paths < 1:
            raise SchemaError("paths must be a positive integer")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise SchemaError("seed must be a nonnegative integer")
        if self.method not in ("voc", "em"):
            raise SchemaError("method must be 'voc' or 'em'")
        if not isinstance(self.checkpoints, int) or self.checkpoints < 3:
            raise SchemaError("checkpoints must be an integer >= 3")


@dataclass(frozen=True)
class Outputs:
    report_json: str | None = None
    paths_csv: str | None = None


@dataclass(frozen=True)
class KernelSpec:
    H: str
    H_inf: str | None = None
    H1: str | None = None
    f: str = "1"
    theta: float | None = None


def closed_form_from_json(obj: dict, dim: int, kind: str) -> SpectralData:
    """User-supplied leading data: ``alpha``, ``n``, ``gap`` and ``leading`` terms.

    The leading part defaults to ``t^n e^{alpha t} sum_j (P_j cos + Q_j sin)(beta_j t)``.
    """
    try:
        alpha = float(obj["alpha"])
        n = int(obj.get("n", 0))
        gap = float(obj["gap"])
        terms = tuple(
            LeadingTerm(
                float(t.get("beta", 0.0)),
                np.asarray(t["Pstar"], float).reshape(dim, dim),
                np.asarray(t.get("Qstar", np.zeros((dim, dim))), float).reshape(dim, dim),
            )
            for t in obj["leading"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed closed_form: {exc}") from exc
    if gap <= 0 or not terms:
        raise SchemaError("closed_form needs a positive gap and at least one leading term")

    def S(t, tilt=0.0):
        t = np.atleast_1d(np.asarray(t, float))
        out = np.zeros(t.shape + (dim, dim))
        for term in terms:
            out += np.cos(term.beta * t)[:, None, None] * term.Pstar + np.sin(term.beta * t)[:, None, None] * term.Qstar
        return out * (t**n * np.exp((alpha - tilt) * t))[:, None, None]

    a_star = obj.get("alpha_star")
    return SpectralData.from_closed_form(alpha, n, terms, gap, S, kind, -math.inf if a_star is None else float(a_star))


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Everything a command needs: the system (inline or a named fixture),
    search box or closed-form leading data, numerics and output paths."""

    system: SystemSpec | None = None
    fixture: str | None = None
    search: Search | None = None
    closed_form: SpectralData | None = None
    numerics: Numerics = field(default_factory=Numerics)
    outputs: Outputs = field(default_factory=Outputs)
    kernel: KernelSpec | None = None
    workers: int | None = None
    raw: dict = field(default_factory=dict)

    def resolved_system(self) -> SystemSpec:
        if self.system is not None:
            return self.system
        if self.fixture is not None:
            return get_fixture(self.fixture).spec
        raise SchemaError("config needs a 'system' or a 'fixture'")

    def resolved_closed_form(self) -> SpectralData | None:
        if self.closed_form is not None:
            return self.closed_form
        if self.fixture is not None and self.system is None:
            return get_fixture(self.fixture).closed_form
        return None

    def resolved_search(self) -> Search | None:
        if self.search is not None:
            return self.search
        if self.fixture is not None and self.system is None:
            return get_fixture(self.fixture).search
        return None

    @classmethod
    def from_json(cls, obj) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise SchemaError("config must be a JSON object")
        known = {"system", "fixture", "search", "closed_form", "numerics", "outputs", "kernel", "workers"}
        extra = set(obj) - known
        if extra:
            raise SchemaError(f"unknown config keys: {sorted(extra)}")
        fixture = obj.get("fixture")
        if fixture is not None and fixture not in FIXTURES:
            raise SchemaError(f"unknown fixture {fixture!r}; choose from {sorted(FIXTURES)}")
        system = None
        if "system" in obj:
            try:
                system = SystemSpec.from_json(obj["system"])
            except (ValueError, TypeError, KeyError) as exc:
                raise SchemaError(f"invalid system: {exc}") from exc
        search = None
        if "search" in obj:
            try:
                s = obj["search"]
                search = Search(float(s["re_min"]), float(s["re_max"]), float(s["im_max"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"invalid search box: {exc}") from exc
            if not (search.re_min < search.re_max and search.im_max > 0):
                raise SchemaError("search box must have re_min < re_max and im_max > 0")
        closed = None
        if "closed_form" in obj:
            sysd = system or (get_fixture(fixture).spec if fixture else None)
            if sysd is None:
                raise SchemaError("closed_form needs a system or fixture")
            closed = closed_form_from_json(obj["closed_form"], sysd.d, sysd.kind)
        try:
            numerics = Numerics(**obj.get("numerics", {}))
            outputs = Outputs(**obj.get("outputs", {}))
            kernel = KernelSpec(**obj["kernel"]) if "kernel" in obj else None
        except TypeError as exc:
            raise SchemaError(str(exc)) from exc
        workers = obj.get("workers")
        if workers is not None and (not isinstance(workers, int) or workers < 1):
            raise SchemaError("workers must be a positive integer")
        return cls(system, fixture, search, closed, numerics, outputs, kernel, workers, obj)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"config is not valid JSON: {exc}") from exc
        return cls.from_json(obj)

    def numerics_json(self) -> dict:
        return asdict(self.numerics)
