import numpy as np
import pytest

from volterra_asym.ensemble import CHUNK, EnsembleConfig, resolve_workers, run_ensemble
from volterra_asym.fixtures import get_fixture
from volterra_asym.limits import predicted_law, realized_multipliers
from volterra_asym.pathsim import SystemSpec, simulate_em, simulate_voc
from volterra_asym.resolvent import solve_resolvent
from volterra_asym.rng import BrownianDriver
from volterra_asym.timefunc import ExpPolyFunction, FunctionTerm


def test_worker_count_does_not_change_results(monkeypatch):
    fx = get_fixture("example3")
    sd = fx.spectral()
    cfg = EnsembleConfig(seed=5, paths=CHUNK + 150, h=1e-2, T=4.0)
    monkeypatch.setenv("VOLTERRA_ASYM_WORKERS", "1")
    a = run_ensemble(fx.spec, sd, cfg)
    monkeypatch.setenv("VOLTERRA_ASYM_WORKERS", "3")
    b = run_ensemble(fx.spec, sd, cfg)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.coefficients, b.coefficients)


def test_env_overrides_config(monkeypatch):
    monkeypatch.setenv("VOLTERRA_ASYM_WORKERS", "2")
    assert resolve_workers(7) == 2
    monkeypatch.delenv("VOLTERRA_ASYM_WORKERS")
    assert resolve_workers(7) == 7


def test_voc_ensemble_matches_single_path():
    fx = get_fixture("example1")
    sd = fx.spectral()
    cfg = EnsembleConfig(seed=2, paths=3, h=1e-2, T=2.0, checkpoints=5)
    res = run_ensemble(fx.spec, sd, cfg)
    grid = solve_resolvent(fx.spec.measure, 1e-2, 2.0, res.tilt)
    single = simulate_voc(fx.spec, BrownianDriver(2, 1, 1e-2, 2), grid)
    ck = np.round(res.times / 1e-2).astype(int)
    assert np.allclose(res.values[1], single.values[ck], atol=1e-10)
    path = simulate_em(fx.spec, BrownianDriver(2, 1, 1e-2, 2), 2.0, tilt=res.tilt)
    ms = realized_multipliers(path, sd, law=res.law, tail_tol=cfg.tail_tol)
    assert np.allclose(res.coefficients[1], ms.coefficients, atol=1e-10)


def test_em_and_voc_ensembles_agree_to_order_h():
    fx = get_fixture("example3")
    sd = fx.spectral()
    v = run_ensemble(fx.spec, sd, EnsembleConfig(seed=1, paths=50, h=1e-3, T=1.0, multipliers=False))
    e = run_ensemble(fx.spec, sd, EnsembleConfig(seed=1, paths=50, h=1e-3, T=1.0, method="em", multipliers=False))
    assert np.max(np.abs(v.values - e.values)) < 2e-2


def test_isometry_over_ten_thousand_paths():
    # f = 0, X0 = 0: realized multipliers against the predicted covariance
    fx = get_fixture("example3")
    spec = SystemSpec(fx.spec.measure, fx.spec.sigma, x0=[0.0, 0.0])
    sd = fx.spectral()
    res = run_ensemble(spec, sd, EnsembleConfig(seed=11, paths=10_000, h=1e-2, T=2.0, checkpoints=3))
    law = predicted_law(sd, spec)
    flat = res.coefficients.reshape(res.coefficients.shape[0], -1)
    emp = np.cov(flat.T)
    N = flat.shape[0]
    # SE of a sample covariance entry for Gaussian data
    var = np.diag(law.cov)
    se = np.sqrt((law.cov**2 + np.outer(var, var)) / N)
    assert np.all(np.abs(emp - law.cov) <= 4 * se + 1e-12)
    assert np.allclose(law.mean, 0.0)


def test_scaling_on_shared_increments():
    fx = get_fixture("example1")
    sd = fx.spectral()
    c = 2.5
    sig = ExpPolyFunction((2, 2), (FunctionTerm(c * np.eye(2), 0, 0.3 - 1.0),))
    zero = SystemSpec(fx.spec.measure, fx.spec.sigma, x0=[0.0, 0.0])
    scaled = SystemSpec(fx.spec.measure, sig, x0=[0.0, 0.0])
    # the tail tolerance scales with the noise so both runs integrate to the same horizon
    a = run_ensemble(zero, sd, EnsembleConfig(seed=4, paths=20, h=1e-2, T=2.0, tail_tol=1e-6))
    b = run_ensemble(scaled, sd, EnsembleConfig(seed=4, paths=20, h=1e-2, T=2.0, tail_tol=c * 1e-6))
    assert a.T_tail == b.T_tail
    assert np.allclose(b.coefficients, c * a.coefficients, rtol=1e-12, atol=1e-14)
    assert np.allclose(b.law.cov, c**2 * a.law.cov, rtol=1e-8)


def test_missing_law_falls_back_to_mean(ex4):
    fx, sd = ex4
    from volterra_asym.pathsim import grid_from_function

    grid = grid_from_function(fx.resolvent, 1, 1e-2, 3.0, tilt=-2.0)
    res = run_ensemble(fx.spec, sd, EnsembleConfig(seed=0, paths=10, h=1e-2, T=3.0), grid)
    assert res.law is None and "Sigma" in res.law_error
    assert res.coefficients is None
    assert res.predicted_mean[1, 0] == pytest.approx(-1 / 3)


def test_grid_mismatch_rejected():
    fx = get_fixture("example1")
    grid = solve_resolvent(fx.spec.measure, 2e-2, 2.0, 0.3)
    with pytest.raises(ValueError):
        run_ensemble(fx.spec, fx.spectral(), EnsembleConfig(seed=0, paths=2, h=1e-2, T=2.0), grid)
