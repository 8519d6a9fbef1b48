"""Random limit multipliers, their Gaussian law, and the limit verification.

Writing ``r(t) ~ t^n e^{alpha t} sum_j (P_j cos beta_j t + Q_j sin beta_j t)``
and expanding ``r(t - s)`` gives, per leading index ``j``, the weights

    w1_j(s) = e^{-alpha s} (P_j sin beta_j s + Q_j cos beta_j s)   (sin coefficient)
    w2_j(s) = e^{-alpha s} (P_j cos beta_j s - Q_j sin beta_j s)   (cos coefficient)

so ``X(t) / (t^n e^{alpha t}) -> sum_j A_j sin beta_j t + B_j cos beta_j t`` with
``A_j = Q_j X0 + int w1_j f + int w1_j Sigma dB`` and
``B_j = P_j X0 + int w2_j f + int w2_j Sigma dB`` (Volterra kind).  For the delay
kind ``X0`` is replaced by ``phi(0)`` and the initial-segment integrals
``G1_j, G2_j`` are added.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .charspec import SpectralData
from .measures import DELAY, VOLTERRA, MeasureRep
from .pathsim import SimPath, SystemSpec
from .timefunc import ExpPolyFunction

__all__ = [
    "IntegrabilityError",
    "TailError",
    "IntensityDiagnostic",
    "MultiplierSet",
    "PredictedLaw",
    "VerificationReport",
    "check_intensity_conditions",
    "predicted_law",
    "deterministic_parts",
    "multiplier_weights",
    "tail_horizon",
    "realized_multipliers",
    "limit_combination",
    "verify_limit",
]

MS_SLOPE_FIT_FROM = 0.25


class IntegrabilityError(ValueError):
    """A weighted intensity integral diverges, so the limit law is undefined."""

    def __init__(self, which: str, msg: str):
        super().__init__(msg)
        self.which = which


class TailError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# intensity conditions

@dataclass(frozen=True)
class IntensityDiagnostic:
    f_ok: bool
    sigma_ok: bool
    f_value: float | None
    sigma_value: float | None
    f_rate: float | None = None
    sigma_rate: float | None = None
    method: str = "closed-form"

    def to_json(self) -> dict:
        return {
            "f_ok": self.f_ok,
            "sigma_ok": self.sigma_ok,
            "f_value": self.f_value,
            "sigma_value": self.sigma_value,
            "f_divergence_rate": self.f_rate,
            "sigma_divergence_rate": self.sigma_rate,
            "method": self.method,
        }


def _window_test(g, max_windows: int = 14):
    """Convergence of ``int_0^inf g`` from doubling windows ``[2^k, 2^{k+1}]``.

    Returns (converged, value estimate). A window sum that shrinks by a
    factor below 0.75 over the last three windows counts as convergent; the
    remaining tail is extrapolated geometrically.  Windows stop early where
    ``g`` stops being finite; fewer than five usable windows is inconclusive
    and reported as divergent.
    """
    head = integrate.quad(g, 0.0, 1.0, limit=200)[0]
    windows = []
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(max_windows):
            a, b = 2.0**k, 2.0 ** (k + 1)
            if not (np.isfinite(g(a)) and np.isfinite(g(b))):
                break  # a separately evaluated tilt factor over/underflowed
            windows.append(integrate.quad(g, a, b, limit=400)[0])
    if len(windows) < 5 or not np.all(np.isfinite(windows)):
        return False, None
    w = np.abs(np.array(windows))
    total = head + sum(windows)
    if w[-1] == 0.0:
        return True, total
    ratios = w[-3:] / np.maximum(w[-4:-1], 1e-300)
    if np.all(ratios < 0.75):
        q = float(np.max(ratios))
        return True, total + windows[-1] * q / (1 - q)
    return False, None


def _exppoly_integral(terms) -> tuple[bool, float | None, float]:
    """``int_0^inf Re(sum c t^p e^{z t}) dt`` for sq-norm terms; (finite, value, max rate)."""
    live = [(c, p, z) for c, p, z in terms if abs(c) > 0]
    if not live:
        return True, 0.0, -math.inf
    rate = max(z.real for _, _, z in live)
    if rate >= 0:
        return False, None, rate
    val = sum((c * math.factorial(p) / (-z) ** (p + 1)).real for c, p, z in live)
    return True, float(val), rate


def check_intensity_conditions(spec: SystemSpec, alpha: float) -> IntensityDiagnostic:
    """Decide ``int e^{-2 alpha t}||Sigma||^2 < inf`` and ``int e^{-alpha t}||f|| < inf``.

    Exp-poly functions are decided in closed form; other functions by the
    doubling-window ratio test.

    >>> from volterra_asym.timefunc import ExpPolyFunction, FunctionTerm
    >>> sig = ExpPolyFunction((1, 1), (FunctionTerm([[1.0]], rate=2.5),))
    >>> spec = SystemSpec(MeasureRep.volterra(1), sig, x0=[0.0])
    >>> check_intensity_conditions(spec, 3.0).sigma_value
    1.0
    """
    sig = spec.sigma.tilted(alpha) if spec.frame_tilt == 0 else spec.sigma.tilted(alpha - spec.frame_tilt)
    f = spec.f.tilted(alpha) if spec.frame_tilt == 0 else spec.f.tilted(alpha - spec.frame_tilt)
    method = "closed-form"
    if isinstance(sig, ExpPolyFunction):
        s_ok, s_val, s_rate = _exppoly_integral(sig.sq_norm_terms())
        s_rate = None if s_ok else s_rate
    else:
        method = "window-ratio"
        s_ok, s_val = _window_test(lambda t: float(np.sum(np.asarray(sig(np.array([t])))[0] ** 2)))
        s_rate = None
    if isinstance(f, ExpPolyFunction):
        if f.is_zero:
            f_ok, f_val, f_rate = True, 0.0, None
        elif f.max_rate() < 0:
            f_ok, f_rate = True, None
            f_val = integrate.quad(lambda t: float(np.linalg.norm(f(np.array([t]))[0])), 0, np.inf, limit=400)[0]
        else:
            f_ok, f_val, f_rate = False, None, f.max_rate()
    else:
        method = "window-ratio"
        f_ok, f_val = _window_test(lambda t: float(np.linalg.norm(np.asarray(f(np.array([t])))[0])))
        f_rate = None
    return IntensityDiagnostic(bool(f_ok), bool(s_ok), f_val, s_val, f_rate, s_rate, method)


# ---------------------------------------------------------------------------
# weights and deterministic parts

def _leading_arrays(sd: SpectralData):
    P = np.stack([np.asarray(t.Pstar, float) for t in sd.leading])
    Q = np.stack([np.asarray(t.Qstar, float) for t in sd.leading])
    beta = np.array([t.beta for t in sd.leading])
    return P, Q, beta


def multiplier_weights(sd: SpectralData, s) -> np.ndarray:
    """Trig weights without the exponential: (len(s), 2N, d, d), rows (sin_j, cos_j).

    Multiply on the right by the tilted noise ``e^{-alpha s} Sigma(s)`` (or
    forcing) to get the multiplier integrands.
    """
    P, Q, beta = _leading_arrays(sd)
    s = np.atleast_1d(np.asarray(s, float))
    sn = np.sin(np.outer(s, beta))[:, :, None, None]
    cs = np.cos(np.outer(s, beta))[:, :, None, None]
    w1 = P[None] * sn + Q[None] * cs
    w2 = P[None] * cs - Q[None] * sn
    out = np.empty((s.size, 2 * len(beta)) + P.shape[1:])
    out[:, 0::2] = w1
    out[:, 1::2] = w2
    return out


def _g_integrals(sd: SpectralData, measure: MeasureRep, phi, nodes: int = 129) -> np.ndarray:
    """Initial-segment integrals (G1_j, G2_j) stacked as (2N, d).

    ``G = int_{-tau}^0 int_{[-tau,u]} e^{alpha th}{...}(th) nu(ds) phi(u) du`` with
    ``th = s - u``: the trig weights act on the left of the measure weight.
    Composite Simpson in both variables.
    """
    alpha = sd.alpha
    tau = measure.tau
    N = len(sd.leading)
    d = measure.dim
    out = np.zeros((2 * N, d))
    simpson = np.full(nodes, 2.0)
    simpson[1::2] = 4.0
    simpson[0] = simpson[-1] = 1.0

    # the stacked weight order is (sin, cos) = (w1, w2); the initial-segment
    # sin coefficient pairs with Q cos - P sin, i.e. w1 evaluated at -th
    def accumulate(s0, Wmeas):
        if s0 >= 0:
            return np.zeros((2 * N, d))
        th = np.linspace(s0, 0.0, nodes)
        w = simpson * (-s0) / (3 * (nodes - 1))
        W = multiplier_weights(sd, -th) * np.exp(alpha * th)[:, None, None, None]
        ph = np.asarray(phi(s0 - th), float)  # (nodes, d)
        v = Wmeas @ ph.T  # (d, nodes)
        return np.einsum("k,kjab,bk->ja", w, W, v)

    for at in measure.atoms:
        out += accumulate(at.loc, at.weight)
    if measure.density:
        s_nodes = np.linspace(-tau, 0.0, nodes)
        ws = simpson * tau / (3 * (nodes - 1))
        for term in measure.density:
            prof = term.scalar(s_nodes)
            for s0, wgt, pr in zip(s_nodes, ws, prof):
                if pr != 0 and wgt != 0:
                    out += wgt * pr * accumulate(s0, term.matrix)
    return out


def _quad_stack(fn, rtol: float):
    val, err = integrate.quad_vec(fn, 0.0, np.inf, epsrel=rtol, epsabs=1e-14, limit=2000)
    return np.asarray(val)


def deterministic_parts(sd: SpectralData, spec: SystemSpec, rtol: float = 1e-8) -> dict:
    """Deterministic pieces of the limit coefficients, each stacked as (2N, d)."""
    alpha = sd.alpha
    P, Q, beta = _leading_arrays(sd)
    N, d = P.shape[0], P.shape[1]
    f = spec.f.tilted(alpha - spec.frame_tilt)
    if isinstance(f, ExpPolyFunction) and f.is_zero:
        D = np.zeros((2 * N, d))
    else:
        diag = check_intensity_conditions(spec, alpha)
        if not diag.f_ok:
            raise IntegrabilityError("f", "forcing condition int e^{-alpha t}||f(t)|| dt < inf is violated")
        D = _quad_stack(lambda s: np.einsum("jab,b->ja", multiplier_weights(sd, s)[0], np.asarray(f(np.array([s])))[0]), rtol)
    x0 = spec.start
    init = np.empty((2 * N, d))
    init[0::2] = Q @ x0
    init[1::2] = P @ x0
    G = np.zeros((2 * N, d))
    if spec.kind == DELAY:
        meas = spec.measure.tilted(-spec.frame_tilt) if spec.frame_tilt else spec.measure
        phi = spec.phi.tilted(-spec.frame_tilt) if spec.frame_tilt else spec.phi
        G = _g_integrals(sd, meas, phi)
    return {"init": init, "D": D, "G": G, "mean": init + D + G}


# ---------------------------------------------------------------------------
# law

@dataclass(frozen=True, eq=False)
class PredictedLaw:
    """Gaussian law of the stacked limit coefficients ``(A_1, B_1, ..., A_N, B_N)``."""

    mean: np.ndarray  # (2N, d)
    cov: np.ndarray  # (2N d, 2N d)
    betas: np.ndarray
    parts: dict = field(default_factory=dict)

    @property
    def std_scale(self) -> float:
        return float(np.sqrt(max(np.max(np.diag(self.cov)), 0.0))) if self.cov.size else 0.0

    @property
    def mean_scale(self) -> float:
        return float(np.max(np.abs(self.mean))) if self.mean.size else 0.0

    def combination(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of ``sum_j A_j sin beta_j t + B_j cos beta_j t``."""
        C = limit_combination(self.betas, self.mean.shape[1], t)
        return C @ self.mean.ravel(), C @ self.cov @ C.T

    def to_json(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "betas": self.betas.tolist(),
            "min_eigenvalue": float(np.min(np.linalg.eigvalsh(self.cov))) if self.cov.size else 0.0,
        }


def limit_combination(betas, d: int, t: float) -> np.ndarray:
    """Matrix mapping the flattened (2N, d) coefficients to the limit at time ``t``."""
    blocks = []
    for b in betas:
        blocks += [math.sin(b * t) * np.eye(d), math.cos(b * t) * np.eye(d)]
    return np.hstack(blocks)


def predicted_law(sd: SpectralData, spec: SystemSpec, rtol: float = 1e-8) -> PredictedLaw:
    """Mean and covariance of the limit coefficients by Ito isometry.

    Raises
    ------
    IntegrabilityError
        When ``int e^{-2 alpha t} ||Sigma(t)||^2 dt`` diverges (the stochastic
        multipliers do not exist).
    """
    alpha = sd.alpha
    diag = check_intensity_conditions(spec, alpha)
    if not diag.sigma_ok:
        raise IntegrabilityError(
            "sigma",
            f"noise condition int e^{{-2 alpha t}}||Sigma(t)||^2 dt < inf is violated at alpha={alpha}"
            + (f" (integrand grows at rate {diag.sigma_rate})" if diag.sigma_rate is not None else ""),
        )
    parts = deterministic_parts(sd, spec, rtol)
    P, Q, beta = _leading_arrays(sd)
    N, d = P.shape[0], P.shape[1]
    sig = spec.sigma.tilted(alpha - spec.frame_tilt)

    def integrand(s):
        W = multiplier_weights(sd, s)[0] @ np.asarray(sig(np.array([s])))[0]  # (2N, d, d')
        M = W.reshape(2 * N * d, -1)
        return M @ M.T

    cov = _quad_stack(integrand, rtol)
    if spec.kind == VOLTERRA and spec.x0_cov is not None:
        M0 = np.empty((2 * N, d, d))
        M0[0::2] = Q
        M0[1::2] = P
        M0 = M0.reshape(2 * N * d, d)
        cov = cov + M0 @ spec.x0_cov @ M0.T
    cov = 0.5 * (cov + cov.T)
    return PredictedLaw(parts["mean"], cov, beta, parts)


# ---------------------------------------------------------------------------
# tail horizon and realized multipliers

def _tail_sq(sig, T: float) -> float:
    """Upper bound on ``int_T^inf ||sig(t)||_F^2 dt`` (sig already tilted)."""
    if isinstance(sig, ExpPolyFunction):
        total = 0.0
        for c, p, z in sig.sq_norm_terms():
            if abs(c) == 0:
                continue
            k = -z.real
            if k <= 0:
                return math.inf
            total += abs(c) * special.gamma(p + 1) * special.gammaincc(p + 1, k * T) / k ** (p + 1)
        return float(total)
    val = integrate.quad(lambda t: float(np.sum(np.asarray(sig(np.array([t])))[0] ** 2)), T, np.inf, limit=400)[0]
    return float(val)


def tail_horizon(sd: SpectralData, spec: SystemSpec, tail_tol: float, t_min: float = 0.0, t_max: float = 1e4) -> tuple[float, float]:
    """Smallest ``T_tail >= t_min`` (to 1%) with certified tail bound below ``tail_tol``.

    The bound is ``(||P*|| + ||Q*||) (int_T^inf e^{-2 alpha s}||Sigma||^2 ds)^{1/2}``,
    maximised over the leading indices.
    """
    sig = spec.sigma.tilted(sd.alpha - spec.frame_tilt)
    amp = max(np.linalg.norm(t.Pstar) + np.linalg.norm(t.Qstar) for t in sd.leading)

    def bound(T):
        return amp * math.sqrt(max(_tail_sq(sig, T), 0.0))

    lo = max(t_min, 0.0)
    if bound(lo) < tail_tol:
        return lo, bound(lo)
    hi = max(1.0, 2 * lo)
    while bound(hi) >= tail_tol:
        hi *= 2
        if hi > t_max:
            raise TailError(f"tail bound stays above {tail_tol:.3g} up to T={t_max:g}")
    while hi - lo > 0.01 * hi:
        mid = 0.5 * (lo + hi)
        if bound(mid) < tail_tol:
            hi = mid
        else:
            lo = mid
    return hi, bound(hi)


def default_tail_tol(law: PredictedLaw) -> float:
    return 1e-4 * (law.std_scale + law.mean_scale + 1e-12)


@dataclass(frozen=True, eq=False)
class MultiplierSet:
    """Realized multipliers of one path, each stacked as (2N, d) with rows (sin_j, cos_j).

    ``L`` are the stochastic integrals, ``D`` the forcing integrals, ``M = L + D``,
    ``G`` the initial-segment integrals (zero for Volterra), and
    ``coefficients`` the full limit coefficients (``Q X0 + M1``, ``P X0 + M2``
    or their delay analogues ``J1, J2``).
    """

    L: np.ndarray
    D: np.ndarray
    G: np.ndarray
    init: np.ndarray
    T_tail: float
    tail_bound: float

    @property
    def M(self) -> np.ndarray:
        return self.L + self.D

    @property
    def coefficients(self) -> np.ndarray:
        return self.init + self.G + self.M

    def split(self, A: np.ndarray):
        return A[0::2], A[1::2]

    @property
    def L1(self):
        return self.L[0::2]

    @property
    def L2(self):
        return self.L[1::2]

    @property
    def J1(self):
        return self.coefficients[0::2]

    @property
    def J2(self):
        return self.coefficients[1::2]

    def to_json(self) -> dict:
        return {
            "L": self.L.tolist(),
            "D": self.D.tolist(),
            "G": self.G.tolist(),
            "coefficients": self.coefficients.tolist(),
            "T_tail": self.T_tail,
            "tail_bound": self.tail_bound,
        }


def stochastic_weight_matrix(sd: SpectralData, spec: SystemSpec, h: float, n: int) -> np.ndarray:
    """Left-point weights so that ``L.ravel() = dB.ravel() @ Wm``; shape (n d', 2N d)."""
    sig = spec.sigma.tilted(sd.alpha - spec.frame_tilt)
    s = h * np.arange(n)
    W = np.einsum("kjab,kbc->kcja", multiplier_weights(sd, s), np.asarray(sig(s), float))
    return W.reshape(n * spec.d_noise, -1)


def realized_multipliers(
    path: SimPath,
    sd: SpectralData,
    spec: SystemSpec | None = None,
    tail_tol: float | None = None,
    law: PredictedLaw | None = None,
) -> MultiplierSet:
    """Multipliers on the path's own Brownian increments, extended to ``T_tail``."""
    spec = spec or path.spec
    diag = check_intensity_conditions(spec, sd.alpha)
    if not diag.sigma_ok:
        raise IntegrabilityError("sigma", "noise condition int e^{-2 alpha t}||Sigma||^2 dt < inf is violated")
    law = law or predicted_law(sd, spec)
    tol = default_tail_tol(law) if tail_tol is None else tail_tol
    h = path.h
    T_tail, bound = tail_horizon(sd, spec, tol, t_min=path.times[-1])
    n = int(math.ceil(T_tail / h - 1e-9))
    dB = path.driver.increments(n)
    L = (dB.ravel() @ stochastic_weight_matrix(sd, spec, h, n)).reshape(law.mean.shape)
    parts = law.parts
    init = parts["init"]
    if spec.kind == VOLTERRA and spec.x0_cov is not None:
        P, Q, _ = _leading_arrays(sd)
        x0 = spec.initial_value(path.driver)
        init = np.empty_like(init)
        init[0::2] = Q @ x0
        init[1::2] = P @ x0
    return MultiplierSet(L, parts["D"], parts["G"], init, n * h, bound)


# ---------------------------------------------------------------------------
# verification

@dataclass(frozen=True, eq=False)
class VerificationReport:
    times: np.ndarray
    residuals: np.ndarray | None  # (paths, len(times))
    ms_curve: np.ndarray | None
    checks: dict
    details: dict

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def quantiles(self, qs=(0.1, 0.5, 0.9)) -> np.ndarray | None:
        if self.residuals is None:
            return None
        return np.quantile(self.residuals, qs, axis=0)

    def to_json(self) -> dict:
        out = {"passed": self.passed, "checks": self.checks, "details": self.details, "times": self.times.tolist()}
        if self.ms_curve is not None:
            out["mean_square_curve"] = self.ms_curve.tolist()
            out["residual_quantiles"] = {str(q): row.tolist() for q, row in zip((0.1, 0.5, 0.9), self.quantiles())}
        return out


def _moment_checks(x: np.ndarray, mean: np.ndarray, var: np.ndarray, k: float = 4.0) -> dict:
    """Per-component mean and variance comparisons with ensemble standard errors."""
    N = x.shape[0]
    m = x.mean(axis=0)
    c = x - m
    s2 = (c**2).sum(axis=0) / (N - 1)
    m4 = (c**4).mean(axis=0)
    se_mean = np.sqrt(s2 / N)
    se_var = np.sqrt(np.maximum(m4 - s2**2, 0.0) / N)
    ok_mean = np.abs(m - mean) <= k * np.maximum(se_mean, 1e-300) + 1e-12 * (1 + np.abs(mean))
    ok_var = np.abs(s2 - var) <= k * np.maximum(se_var, 1e-300) + 1e-12 * (1 + np.abs(var))
    return {
        "empirical_mean": m.tolist(),
        "predicted_mean": np.asarray(mean).tolist(),
        "se_mean": se_mean.tolist(),
        "empirical_var": s2.tolist(),
        "predicted_var": np.asarray(var).tolist(),
        "se_var": se_var.tolist(),
        "mean_ok": bool(np.all(ok_mean)),
        "var_ok": bool(np.all(ok_var)),
    }


def verify_limit(
    times: np.ndarray,
    values: np.ndarray,
    sd: SpectralData,
    spec: SystemSpec,
    coefficients: np.ndarray | None = None,
    law: PredictedLaw | None = None,
    law_error: str | None = None,
    predicted_mean: np.ndarray | None = None,
    pathwise_tol: float | None = None,
    vote: float = 0.9,
    k_se: float = 4.0,
) -> VerificationReport:
    """Check the limit theorem on an ensemble.

    Parameters
    ----------
    times : (m,) checkpoint times (must include ``T/2`` and ``T``).
    values : (paths, m, d) values of ``e^{-alpha t} X(t)`` at the checkpoints.
    coefficients : (paths, 2N, d) realized limit coefficients on the same
        increments, or None when the multipliers do not exist.
    law : predicted law; ``law_error`` explains its absence.
    predicted_mean : (2N, d) deterministic coefficients, used for the mean
        comparison when the full law does not exist.
    """
    times = np.asarray(times, float)
    P = values.shape[0]
    T = times[-1]
    iT = len(times) - 1
    iH = int(np.argmin(np.abs(times - 0.5 * T)))
    n = sd.n
    betas = np.array([t.beta for t in sd.leading])
    d = values.shape[2]
    checks: dict = {}
    details: dict = {"paths": int(P), "T": float(T), "alpha": sd.alpha, "n": n}
    if P < 100:
        details["warning"] = "fewer than 100 paths"
    norm = np.where(times > 0, np.maximum(times, 1e-300) ** n, 1.0)
    scaled = values / norm[None, :, None]

    residuals = ms = None
    if coefficients is not None:
        lim = np.stack([coefficients.reshape(P, -1) @ limit_combination(betas, d, t).T for t in times], axis=1)
        residuals = np.linalg.norm(scaled - lim, axis=2)
        ms = np.mean(residuals**2, axis=0)
        frac = float(np.mean(residuals[:, iT] < residuals[:, iH]))
        scale = (law.std_scale + law.mean_scale) if law is not None else float(np.std(coefficients))
        tol = 0.05 * scale if pathwise_tol is None else pathwise_tol
        med = float(np.median(residuals[:, iT]))
        checks["pathwise"] = {
            "passed": bool(frac >= vote and med < tol),
            "decreasing_fraction": frac,
            "median_residual_T": med,
            "tolerance": tol,
        }
        use = (times >= MS_SLOPE_FIT_FROM * T) & (times > 0) & (ms > 0)
        slope = float(np.polyfit(times[use], np.log(ms[use]), 1)[0]) if np.count_nonzero(use) >= 2 else math.nan
        checks["mean_square"] = {
            "passed": bool(slope < 0 and ms[iT] < ms[iH]),
            "slope": slope,
            "ms_T": float(ms[iT]),
            "ms_half": float(ms[iH]),
        }
    else:
        reason = law_error or "limit coefficients unavailable"
        checks["pathwise"] = {"passed": False, "reason": reason}
        checks["mean_square"] = {"passed": False, "reason": reason}

    if law is not None:
        mean_T, cov_T = law.combination(T)
        dist = _moment_checks(scaled[:, iT, :], mean_T, np.diag(cov_T), k_se)
        checks["distribution"] = {"passed": dist["mean_ok"] and dist["var_ok"], **dist}
        if coefficients is not None:
            flat = coefficients.reshape(P, -1)
            iso = _moment_checks(flat, law.mean.ravel(), np.diag(law.cov), k_se)
            checks["isometry"] = {"passed": iso["mean_ok"] and iso["var_ok"], **iso}
    else:
        entry = {"passed": False, "reason": law_error or "no predicted law"}
        if predicted_mean is not None:
            mean_T = limit_combination(betas, d, T) @ np.asarray(predicted_mean).ravel()
            x = scaled[:, iT, :]
            se = x.std(axis=0, ddof=1) / math.sqrt(P)
            entry.update(
                empirical_mean=x.mean(axis=0).tolist(),
                predicted_mean=mean_T.tolist(),
                se_mean=se.tolist(),
                mean_ok=bool(np.all(np.abs(x.mean(axis=0) - mean_T) <= k_se * se)),
                empirical_var=x.var(axis=0, ddof=1).tolist(),
                predicted_var=None,
                var_ok=False,
            )
        checks["distribution"] = entry
    return VerificationReport(times, residuals, ms, checks, details)
