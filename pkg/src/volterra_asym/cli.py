"""Command-line front end.

Subcommands: ``roots``, ``resolvent``, ``simulate``, ``verify-limit``,
``admissibility`` and ``fixture``.  Each reads an optional JSON config,
writes a JSON report (to ``--out`` or the config's ``outputs.report_json``,
else stdout) and, where it makes sense, a CSV of curves.

Exit codes: 0 success, 2 invalid config, 3 numerical failure (a diagnostic
JSON is still written), 4 a fixture disagrees with its reference values.
Reports carry run-dependent data (timestamps, runtimes, worker counts) only
in their ``metadata`` block, so the rest is byte-identical across reruns.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .admissibility import KernelProbe, check_as_conditions, check_msq_condition, default_t_grid, empirical_convergence
from .charspec import AlphaNotFound, CharFunction, RootFindError, spectral_summary
from .config import ExperimentConfig, Numerics, SchemaError
from .ensemble import EnsembleConfig, resolve_workers, run_ensemble, verify_ensemble
from .exprparse import ParseError, parse_expression
from .fixtures import FIXTURES, Fixture, get_fixture
from .limits import IntegrabilityError, check_intensity_conditions, predicted_law
from .measures import DELAY, DomainError
from .pathsim import grid_from_function
from .resolvent import decompose, delay_step, solve_resolvent

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_SCHEMA", "EXIT_NUMERICAL", "EXIT_MISMATCH"]

EXIT_OK, EXIT_SCHEMA, EXIT_NUMERICAL, EXIT_MISMATCH = 0, 2, 3, 4

# per-fixture run settings for the end-to-end ``fixture`` command
FIXTURE_RUNS = {
    "example1": {"step": 2e-3, "horizon": 10.0},
    "example2": {"step": 1e-2, "horizon": 100.0},
    "example3": {"step": 2e-3, "horizon": 10.0},
    "example4": {"step": 1e-3, "horizon": 15.0},
    "example5": {"step": 1e-3, "horizon": 8.0},
}
FIXTURE_TOL = 1e-8
RESOLVENT_TOL = 1e-4
OVERFLOW_GUARD = 300.0  # alpha * T beyond which resolvent stepping is tilted by alpha


class NumericalFailure(RuntimeError):
    def __init__(self, msg: str, diagnostic: dict | None = None):
        super().__init__(msg)
        self.diagnostic = diagnostic or {}


# ---------------------------------------------------------------------------
# output helpers

def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"


def strip_metadata(text: str) -> dict:
    obj = json.loads(text)
    obj.pop("metadata", None)
    return obj


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path: str | Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def _emit(report: dict, out: str | None, started: float, workers: int | None = None) -> None:
    report["metadata"] = {
        "generated": datetime.now(timezone.utc).isoformat(),
        "runtime_s": time.perf_counter() - started,
        "version": __version__,
    }
    if workers is not None:
        report["metadata"]["workers"] = workers
    text = dumps_report(report)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# shared steps

def _spectral(cfg: ExperimentConfig, spec):
    sd = cfg.resolved_closed_form()
    if sd is not None:
        return sd
    return spectral_summary(CharFunction(spec.measure), cfg.resolved_search())


def _grid_for(cfg: ExperimentConfig, spec, sd, h: float, T: float, tilt: float, fixture: Fixture | None):
    """Resolvent grid; a closed-form resolvent is used when the leading data are closed-form."""
    if sd is not None and sd.closed_form is not None and fixture is not None and fixture.resolvent is not None:
        return grid_from_function(fixture.resolvent, spec.d, h, T, tilt, spec.kind)
    return solve_resolvent(spec.measure, h, T, tilt)


def _ensemble_config(num: Numerics, workers, **over) -> EnsembleConfig:
    base = dict(seed=num.seed, paths=num.paths, h=num.step, T=num.horizon, method=num.method, tilt=num.tilt,
                checkpoints=num.checkpoints, workers=workers, tail_tol=num.tail_tol)
    base.update(over)
    return EnsembleConfig(**base)


def _verify(cfg: ExperimentConfig, spec, sd, fixture: Fixture | None, num: Numerics, workers):
    ecfg = _ensemble_config(num, workers, tilt=None)
    h = delay_step(spec.measure.tau, num.step) if spec.kind == DELAY else num.step
    grid = None
    if ecfg.method == "voc":
        grid = _grid_for(cfg, spec, sd, h, num.horizon, sd.alpha, fixture)
    report, res = verify_ensemble(spec, sd, ecfg, grid)
    return report, res


# ---------------------------------------------------------------------------
# subcommands

def cmd_roots(cfg: ExperimentConfig, args) -> dict:
    # always a genuine zero search: closed-form leading data do not stand in for roots
    spec = cfg.resolved_system()
    sd = spectral_summary(CharFunction(spec.measure), cfg.resolved_search())
    return {"command": "roots", "spectral": sd.to_json()}


def cmd_resolvent(cfg: ExperimentConfig, args) -> dict:
    spec = cfg.resolved_system()
    num = cfg.numerics
    d = spec.d
    sd = spectral_error = None
    try:
        sd = _spectral(cfg, spec)
    except (AlphaNotFound, RootFindError) as exc:
        spectral_error = {"error": str(exc), "diagnostic": getattr(exc, "diagnostic", {})}
    tilt = 0.0 if num.tilt is None else num.tilt
    if num.tilt is None and sd is not None and sd.alpha * num.horizon > OVERFLOW_GUARD:
        tilt = sd.alpha
    grid = solve_resolvent(spec.measure, num.step, num.horizon, tilt)
    report = {"command": "resolvent", "h": grid.h, "T": grid.T, "tilt": grid.tilt, "steps": grid.values.shape[0] - 1}
    if spectral_error is not None:
        report["spectral"] = spectral_error
    dec = None
    if sd is not None:
        report["spectral"] = sd.to_json()
        # the rate fit needs the grid in the alpha frame and a half-step solve
        g = grid if grid.tilt == sd.alpha else solve_resolvent(spec.measure, num.step, num.horizon, sd.alpha)
        g2 = solve_resolvent(spec.measure, g.h / 2, num.horizon, sd.alpha)
        try:
            dec = decompose(g, sd, num.fit_tol, g2)
            report["decomposition"] = dec.to_json()
        except ValueError as exc:
            report["decomposition"] = {"error": str(exc)}
    # beyond the overflow guard only the tilted values e^{-tilt t} r(t) are representable
    vals = grid.values if tilt else grid.untilted()
    prefix = "rt" if tilt else "r"
    csv_path = cfg.outputs.paths_csv or args.csv
    if csv_path:
        header = ["t"] + [f"{prefix}_{i}{j}" for i in range(d) for j in range(d)]
        cols = [grid.times, vals.reshape(vals.shape[0], -1)]
        if dec is not None:
            header.append("remainder_norm_alpha_frame")
            cols.append(np.linalg.norm(dec.remainder, axis=(1, 2)))
        write_csv(csv_path, header, np.column_stack(cols))
    report[f"{prefix}_T"] = vals[-1]
    report[f"{prefix}_max_abs"] = float(np.max(np.abs(vals)))
    return report


def cmd_simulate(cfg: ExperimentConfig, args, workers) -> dict:
    spec = cfg.resolved_system()
    num = cfg.numerics
    tilt = 0.0 if num.tilt is None else num.tilt
    ecfg = _ensemble_config(num, workers, tilt=tilt, multipliers=False)
    grid = None
    if ecfg.method == "voc":
        h = delay_step(spec.measure.tau, num.step) if spec.kind == DELAY else num.step
        grid = solve_resolvent(spec.measure, h, num.horizon, tilt)
    res = run_ensemble(spec, None, ecfg, grid)
    vals = res.values  # (P, m, d)
    P, m, d = vals.shape
    csv_path = cfg.outputs.paths_csv or args.csv
    if csv_path:
        header = ["t"] + [f"x{p}_{i}" for p in range(P) for i in range(d)]
        write_csv(csv_path, header, np.column_stack([res.times, np.transpose(vals, (1, 0, 2)).reshape(m, -1)]))
    return {
        "command": "simulate",
        "h": res.h,
        "tilt": res.tilt,
        "method": num.method,
        "seed": num.seed,
        "paths": P,
        "times": res.times,
        "mean": vals.mean(axis=0),
        "var": vals.var(axis=0, ddof=1) if P > 1 else np.zeros((m, d)),
    }


def cmd_verify(cfg: ExperimentConfig, args, workers, fixture: Fixture | None = None) -> dict:
    spec = cfg.resolved_system()
    sd = _spectral(cfg, spec)
    report, res = _verify(cfg, spec, sd, fixture, cfg.numerics, workers)
    csv_path = cfg.outputs.paths_csv or args.csv
    q = report.quantiles()
    if csv_path and q is not None:
        write_csv(csv_path, ["t", "rho_q10", "rho_q50", "rho_q90", "mean_square"],
                  np.column_stack([report.times, q.T, report.ms_curve]))
    out = {"command": "verify-limit", "spectral": sd.to_json(), "report": report.to_json(),
           "intensity": check_intensity_conditions(spec, sd.alpha).to_json()}
    if res.law is not None:
        out["predicted_law"] = res.law.to_json()
    return out


def cmd_admissibility(cfg: ExperimentConfig, args) -> dict:
    k = cfg.kernel
    if k is None:
        raise SchemaError("admissibility needs a 'kernel' block")
    try:
        probe = KernelProbe.from_expressions(k.H, k.H_inf, k.H1)
        fexpr = parse_expression(k.f)
    except (ParseError, ValueError) as exc:
        raise SchemaError(f"invalid kernel expression: {exc}") from exc
    num = cfg.numerics
    grid = default_t_grid(num.t_max)
    msq = check_msq_condition(probe, grid, num.ms_tol)
    as_ = check_as_conditions(probe, grid, num.ms_tol, k.theta)
    f = lambda s: np.broadcast_to(np.asarray(fexpr(0.0, s), float), np.shape(s))
    emp = empirical_convergence(probe, f, paths=num.paths, T=num.horizon, h=num.step, seed=num.seed,
                                checkpoints=num.checkpoints, theory=msq.verdict)
    return {
        "command": "admissibility",
        "kernel": probe.source,
        "msq": msq.to_json(),
        "as": {key: (v.to_json() if hasattr(v, "to_json") else v) for key, v in as_.items()},
        "empirical": emp.to_json(),
    }


def _close(a, b, tol=FIXTURE_TOL) -> bool:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return a.shape == b.shape and bool(np.all(np.abs(a - b) <= tol * (1.0 + np.abs(b))))


def _example3_cov(exp: dict) -> np.ndarray:
    I = np.eye(2)
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    C = np.block([[exp["Gcc"] * I, exp["Gcs"] * I], [exp["Gcs"] * I, exp["Gss"] * I]])
    M = np.block([[J, I], [I, -J]])  # (L1, L2) = (G_s + J G_c, G_c - J G_s)
    return M @ C @ M.T


def fixture_checks(fx: Fixture, sd, law) -> dict:
    """Compare a fresh computation against the fixture's reference values."""
    exp = fx.expected
    lead = sd.leading[0]
    checks = {
        "alpha": _close(sd.alpha, exp["alpha"], 1e-10),
        "n": sd.n == exp["n"],
        "Pstar": _close(lead.Pstar, exp["Pstar"]),
        "Qstar": _close(lead.Qstar, exp.get("Qstar", np.zeros_like(lead.Pstar))),
    }
    if "beta" in exp:
        checks["beta"] = _close(lead.beta, exp["beta"])
    if "pole_order" in exp:
        checks["pole_order"] = lead.pole_order == exp["pole_order"]
    if "gap" in exp:
        checks["gap"] = _close(sd.gap, exp["gap"], 1e-6)
    if law is not None:
        if "variance" in exp:
            cos_rows = law.cov.reshape(law.mean.shape + law.mean.shape)[1, :, 1, :]
            checks["variance"] = _close(np.diag(cos_rows), exp["variance"], 1e-7)
        if "mean" in exp:
            checks["mean"] = bool(abs(float(law.combination(0.0)[0][0]) - exp["mean"]) <= 1e-7)
        if "Gcc" in exp:
            checks["covariance"] = _close(law.cov, _example3_cov(exp), 1e-7)
    return checks


def cmd_fixture(name: str, args, workers) -> tuple[dict, int]:
    fx = get_fixture(name)
    run = FIXTURE_RUNS[name]
    if args.paths < 0:
        raise SchemaError("--paths must be nonnegative")
    # paths = 0 skips the ensemble; Numerics itself requires at least one path
    num = Numerics(step=run["step"], horizon=run["horizon"], paths=max(args.paths, 1), seed=args.seed)
    cfg = ExperimentConfig(fixture=name)
    spec = fx.spec
    report: dict = {"command": "fixture", "fixture": name, "summary": fx.summary, "numerics": num.__dict__}

    sd = fx.spectral()
    report["spectral"] = sd.to_json()
    law = None
    try:
        law = predicted_law(sd, spec)
        report["predicted_law"] = law.to_json()
    except IntegrabilityError as exc:
        report["predicted_law"] = {"error": str(exc), "which": exc.which}
    checks = fixture_checks(fx, sd, law)

    if fx.resolvent is not None:
        T_r = min(num.horizon, 3.0)
        g = solve_resolvent(spec.measure, num.step, T_r)
        exact = np.asarray(fx.resolvent(g.times), float)
        err = float(np.max(np.abs(g.untilted() - exact)) / max(1.0, float(np.max(np.abs(exact)))))
        report["resolvent"] = {"h": g.h, "T": g.T, "relative_max_error": err}
        checks["resolvent"] = err <= RESOLVENT_TOL

    if args.paths > 0:
        verification, res = _verify(cfg, spec, sd, fx, num, workers)
        report["verification"] = verification.to_json()
    report["checks"] = checks
    report["matches_reference"] = all(checks.values())
    return report, EXIT_OK if report["matches_reference"] else EXIT_MISMATCH


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="volterra-asym", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("roots", "characteristic zeros and leading spectral data"),
        ("resolvent", "resolvent on a grid, with remainder-rate fit"),
        ("simulate", "ensemble of sample paths"),
        ("verify-limit", "Monte Carlo check of the almost-sure limit"),
        ("admissibility", "kernel conditions and empirical convergence"),
    ]:
        s = sub.add_parser(name, help=helptext)
        src = s.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", help="experiment config (JSON)")
        src.add_argument("--fixture", choices=sorted(FIXTURES), help="use a built-in example system")
        s.add_argument("--out", help="report JSON path (default: config outputs.report_json or stdout)")
        s.add_argument("--csv", help="CSV output path")
        s.add_argument("--workers", type=int, help="parallel workers")
    f = sub.add_parser("fixture", help="run a built-in example end to end and diff against reference values")
    f.add_argument("name", choices=sorted(FIXTURES))
    f.add_argument("--paths", type=int, default=1000, help="ensemble size (0 skips the Monte Carlo step)")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out")
    f.add_argument("--workers", type=int)
    return p


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        return ExperimentConfig.load(args.config)
    return ExperimentConfig(fixture=args.fixture)


def main(argv=None) -> int:
    started = time.perf_counter()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_SCHEMA
    out = getattr(args, "out", None)
    workers = None
    try:
        if args.command == "fixture":
            workers = resolve_workers(args.workers)
            report, code = cmd_fixture(args.name, args, workers)
            _emit(report, out, started, workers)
            return code
        cfg = _load_config(args)
        out = out or cfg.outputs.report_json
        workers = resolve_workers(args.workers or cfg.workers)
        if args.command == "roots":
            report = cmd_roots(cfg, args)
        elif args.command == "resolvent":
            report = cmd_resolvent(cfg, args)
        elif args.command == "simulate":
            report = cmd_simulate(cfg, args, workers)
        elif args.command == "verify-limit":
            report = cmd_verify(cfg, args, workers)
        else:
            report = cmd_admissibility(cfg, args)
    except (SchemaError, FileNotFoundError) as exc:
        _emit({"error": "schema", "message": str(exc)}, out, started)
        return EXIT_SCHEMA
    except AlphaNotFound as exc:
        _emit({"error": "AlphaNotFound", "message": str(exc), "diagnostic": exc.diagnostic}, out, started)
        return EXIT_NUMERICAL
    except (RootFindError, IntegrabilityError, DomainError, NumericalFailure, FloatingPointError, ArithmeticError) as exc:
        diag = getattr(exc, "diagnostic", {})
        _emit({"error": type(exc).__name__, "message": str(exc), "diagnostic": diag}, out, started)
        return EXIT_NUMERICAL
    _emit(report, out, started, workers)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
