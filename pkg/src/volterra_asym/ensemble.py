"""Parallel, reproducible ensembles of paths and their limit multipliers.

Paths are processed in fixed chunks; every path draws its increments from its
own counter-based stream, so the results do not depend on the worker count
or on scheduling.  In the variation-of-constants mode a chunk reduces to one
matrix product of the increments against precomputed weights (checkpoint
values and multipliers at once).
"""
from __future__ import annotations

import math
import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .charspec import SpectralData
from .limits import (
    IntegrabilityError,
    PredictedLaw,
    _leading_arrays,
    default_tail_tol,
    deterministic_parts,
    predicted_law,
    stochastic_weight_matrix,
    tail_horizon,
    verify_limit,
)
from .measures import DELAY, VOLTERRA
from .pathsim import (
    SystemSpec,
    _steps,
    deterministic_forcing_conv,
    initial_segment_term,
    simulate_em_batch,
)
from .resolvent import ResolventGrid, delay_step, solve_resolvent
from .rng import BrownianDriver

__all__ = ["EnsembleConfig", "EnsembleResult", "run_ensemble", "verify_ensemble", "resolve_workers"]

CHUNK = 500
_JOB: dict = {}


def resolve_workers(workers: int | None = None) -> int:
    env = os.environ.get("VOLTERRA_ASYM_WORKERS")
    if env:
        return max(1, int(env))
    if workers:
        return max(1, int(workers))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class EnsembleConfig:
    seed: int
    paths: int
    h: float
    T: float
    method: str = "voc"
    tilt: float | None = None
    checkpoints: int = 33
    workers: int | None = None
    tail_tol: float | None = None
    multipliers: bool = True

    def __post_init__(self):
        if self.method not in ("voc", "em"):
            raise ValueError("method must be 'voc' or 'em'")
        if self.paths < 1 or not self.h > 0 or not self.T > 0:
            raise ValueError("paths, step and horizon must be positive")


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    times: np.ndarray
    values: np.ndarray  # (paths, m, d), tilted by `tilt`
    coefficients: np.ndarray | None  # (paths, 2N, d)
    law: PredictedLaw | None
    law_error: str | None
    predicted_mean: np.ndarray | None
    tilt: float
    h: float
    T_tail: float | None = None
    tail_bound: float | None = None


def _checkpoint_indices(n: int, m: int) -> np.ndarray:
    idx = np.unique(np.round(np.linspace(0, n, m)).astype(int))
    return np.unique(np.concatenate((idx, [n // 2, n])))


def _voc_weights(grid: ResolventGrid, work: SystemSpec, n: int, ck: np.ndarray) -> np.ndarray:
    """Weights with ``X_noise[c] = dB[:n].ravel() @ W[:, c]``; shape (n d', m d)."""
    h = grid.h
    sig = np.asarray(work.sigma(h * np.arange(n)), float)  # (n, d, d')
    d, dn = sig.shape[1], sig.shape[2]
    W = np.zeros((n, dn, len(ck), d))
    for c, k in enumerate(ck):
        if k == 0:
            continue
        i = np.arange(k)
        W[:k, :, c, :] = np.einsum("kab,kbe->kea", grid.values[k - i], sig[:k])
    return W.reshape(n * dn, len(ck) * d)


def _run_chunk(idx: int) -> tuple[np.ndarray, np.ndarray | None]:
    job = _JOB
    spec: SystemSpec = job["spec"]
    lo, hi = idx * CHUNK, min((idx + 1) * CHUNK, job["paths"])
    drivers = [BrownianDriver(job["seed"], i, job["h"], spec.d_noise) for i in range(lo, hi)]
    n, n_inc = job["n"], job["n_inc"]
    dB = np.stack([dr.increments(n_inc) for dr in drivers])  # (P, n_inc, d')
    P = hi - lo
    ck = job["ck"]
    d = spec.d
    if job["method"] == "voc":
        vals = (dB[:, :n].reshape(P, -1) @ job["Wck"]).reshape(P, len(ck), d) + job["base"][None]
        if spec.kind == VOLTERRA and spec.x0_cov is not None:
            x0 = np.stack([spec.initial_value(dr) - spec.start for dr in drivers])
            vals += np.einsum("cab,pb->pca", job["r_ck"], x0)
    else:
        X = simulate_em_batch(spec, drivers, n * job["h"], job["tilt"])  # (n+1, d, P)
        vals = np.transpose(X[ck], (2, 0, 1))
    coef = None
    if job["Wm"] is not None:
        nt = job["n_tail"]
        coef = (dB[:, :nt].reshape(P, -1) @ job["Wm"]).reshape(P, -1, d) + job["coef_base"][None]
        if spec.kind == VOLTERRA and spec.x0_cov is not None:
            x0 = np.stack([spec.initial_value(dr) - spec.start for dr in drivers])
            coef += np.einsum("jab,pb->pja", job["M0"], x0)
    return vals, coef


def run_ensemble(spec: SystemSpec, sd: SpectralData | None, cfg: EnsembleConfig, grid: ResolventGrid | None = None) -> EnsembleResult:
    """Checkpoint values of ``e^{-a t} X(t)`` and limit coefficients for every path.

    Without spectral data only the paths are produced (``cfg.tilt`` then
    defaults to zero).
    """
    if sd is None:
        tilt = 0.0 if cfg.tilt is None else cfg.tilt
    else:
        tilt = sd.alpha if cfg.tilt is None else cfg.tilt
    h = cfg.h
    if spec.kind == DELAY:
        h = delay_step(spec.measure.tau, h)
    n = _steps(h, cfg.T, spec)
    ck = _checkpoint_indices(n, cfg.checkpoints)
    work = spec.tilted(tilt)

    law = law_error = mean = None
    if sd is not None:
        try:
            law = predicted_law(sd, spec)
            mean = law.mean
        except IntegrabilityError as exc:
            law_error = str(exc)
            try:
                mean = deterministic_parts(sd, spec)["mean"]
            except IntegrabilityError:
                mean = None

    job = {"spec": spec, "seed": cfg.seed, "paths": cfg.paths, "h": h, "n": n, "ck": ck, "method": cfg.method, "tilt": tilt}
    n_inc = n
    job["Wm"] = None
    T_tail = bound = None
    if law is not None and cfg.multipliers:
        tol = default_tail_tol(law) if cfg.tail_tol is None else cfg.tail_tol
        T_tail, bound = tail_horizon(sd, spec, tol, t_min=n * h)
        n_tail = int(math.ceil(T_tail / h - 1e-9))
        job["n_tail"] = n_tail
        n_inc = max(n_inc, n_tail)
        job["Wm"] = stochastic_weight_matrix(sd, spec, h, n_tail)
        job["coef_base"] = law.mean
        P_, Q_, _ = _leading_arrays(sd)
        M0 = np.empty((2 * len(sd.leading),) + P_.shape[1:])
        M0[0::2], M0[1::2] = Q_, P_
        job["M0"] = M0
    job["n_inc"] = n_inc

    if cfg.method == "voc":
        if grid is None:
            grid = solve_resolvent(spec.measure, h, n * h, tilt)
        if abs(grid.h - h) > 1e-12 * h or abs(grid.tilt - tilt) > 1e-12 * (1 + abs(tilt)):
            raise ValueError("resolvent grid does not match the ensemble step/tilt")
        if grid.values.shape[0] < n + 1:
            raise ValueError("resolvent grid is shorter than the horizon")
        job["Wck"] = _voc_weights(grid, work, n, ck)
        base = np.einsum("kab,b->ka", grid.values[ck], spec.start)
        if spec.kind == DELAY:
            base += initial_segment_term(grid, work.measure, work.phi, n)[ck]
        base += deterministic_forcing_conv(grid, work.f, n * h)[ck]
        job["base"] = base
        job["r_ck"] = grid.values[ck]

    chunks = range(math.ceil(cfg.paths / CHUNK))
    workers = min(resolve_workers(cfg.workers), len(chunks))
    global _JOB
    _JOB = job
    try:
        if workers > 1:
            with ProcessPoolExecutor(workers, mp_context=mp.get_context("fork")) as pool:
                results = list(pool.map(_run_chunk, chunks))
        else:
            results = [_run_chunk(i) for i in chunks]
    finally:
        _JOB = {}
    values = np.concatenate([r[0] for r in results])
    coefficients = np.concatenate([r[1] for r in results]) if job["Wm"] is not None else None
    return EnsembleResult(h * ck, values, coefficients, law, law_error, mean, tilt, h, T_tail, bound)


def verify_ensemble(spec: SystemSpec, sd: SpectralData, cfg: EnsembleConfig, grid: ResolventGrid | None = None, **kw):
    """Run an ensemble and check the limit theorem on it; returns (report, result)."""
    if cfg.tilt is not None and cfg.tilt != sd.alpha:
        raise ValueError("verification works in the frame tilted by alpha")
    res = run_ensemble(spec, sd, cfg, grid)
    report = verify_limit(
        res.times,
        res.values,
        sd,
        spec,
        res.coefficients,
        res.law,
        res.law_error,
        res.predicted_mean,
        **kw,
    )
    report.details.update(
        {"h": res.h, "T_tail": res.T_tail, "tail_bound": res.tail_bound, "method": cfg.method, "seed": cfg.seed}
    )
    return report, res
