import csv
import dataclasses
import json

import numpy as np
import pytest

from volterra_asym import cli, fixtures
from volterra_asym.cli import EXIT_MISMATCH, EXIT_NUMERICAL, EXIT_OK, EXIT_SCHEMA, main, strip_metadata
from volterra_asym.config import ExperimentConfig, Numerics, SchemaError
from volterra_asym.fixtures import EX5_PSTAR

EMPTY_SYSTEM = {
    "measure": {"dim": 2, "support": "volterra", "atoms": [], "density": []},
    "sigma": [[0.0, 0.0], [0.0, 0.0]],
    "x0": [0.0, 0.0],
}


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return str(p)


def run(argv, tmp_path):
    out = tmp_path / "out.json"
    code = main(list(argv) + ["--out", str(out)])
    return code, json.loads(out.read_text())


# config -------------------------------------------------------------------

def test_numerics_validation():
    with pytest.raises(SchemaError):
        Numerics(step=-1.0)
    with pytest.raises(SchemaError):
        Numerics(paths=0)
    with pytest.raises(SchemaError):
        Numerics(method="rk4")
    with pytest.raises(SchemaError):
        Numerics(tail_tol=0.0)


@pytest.mark.parametrize(
    "obj",
    [
        [],
        {"fixtures": "example1"},
        {"fixture": "example9"},
        {"fixture": "example1", "numerics": {"steps": 0.1}},
        {"fixture": "example1", "search": {"re_min": 1.0, "re_max": 0.0, "im_max": 1.0}},
        {"fixture": "example1", "workers": 0},
        {"system": {"measure": {"dim": 1}}},
        {"fixture": "example4", "closed_form": {"alpha": -2.0, "gap": -1.0, "leading": [{"Pstar": [[1.0]]}]}},
    ],
)
def test_schema_errors(obj):
    with pytest.raises(SchemaError):
        ExperimentConfig.from_json(obj)


def test_fixture_config_resolution():
    cfg = ExperimentConfig.from_json({"fixture": "example4"})
    assert cfg.resolved_system().d == 1
    assert cfg.resolved_closed_form().alpha == -2.0
    assert cfg.resolved_search() is None


def test_user_closed_form():
    cfg = ExperimentConfig.from_json(
        {"fixture": "example4", "closed_form": {"alpha": -2.0, "gap": 3.0, "alpha_star": -1.0,
                                                "leading": [{"Pstar": [[-0.3333333333333333]]}]}}
    )
    sd = cfg.resolved_closed_form()
    assert sd.alpha_star == -1.0
    assert sd.closed_form(np.array([1.0]), -2.0)[0, 0, 0] == pytest.approx(-1 / 3)


# exit codes ---------------------------------------------------------------

def test_exit_schema_for_bad_config(tmp_path):
    code, rep = run(["roots", "--config", write(tmp_path, {"fixture": "nope"})], tmp_path)
    assert code == EXIT_SCHEMA and rep["error"] == "schema"
    code, _ = run(["roots", "--config", write(tmp_path, "{not json")], tmp_path)
    assert code == EXIT_SCHEMA
    code, _ = run(["roots", "--config", str(tmp_path / "missing.json")], tmp_path)
    assert code == EXIT_SCHEMA


def test_exit_schema_for_bad_arguments(capsys):
    assert main(["roots"]) == EXIT_SCHEMA
    assert main(["no-such-command"]) == EXIT_SCHEMA


def test_roots_example4_alpha_not_found(tmp_path):
    code, rep = run(["roots", "--fixture", "example4"], tmp_path)
    assert code == EXIT_NUMERICAL
    assert rep["error"] == "AlphaNotFound"
    assert rep["diagnostic"]["alpha_star"] == -1.0
    assert "closed-form" in rep["diagnostic"]["hint"]


def test_roots_example5(tmp_path):
    code, rep = run(["roots", "--fixture", "example5"], tmp_path)
    assert code == EXIT_OK
    lead = rep["spectral"]["leading"][0]
    assert lead["Pstar"][0][0] == pytest.approx(EX5_PSTAR, rel=1e-8)


def test_resolvent_of_empty_measure_is_identity(tmp_path):
    cfg = write(tmp_path, {"system": EMPTY_SYSTEM, "numerics": {"step": 0.1, "horizon": 1.0}})
    csv_path = tmp_path / "r.csv"
    code, rep = run(["resolvent", "--config", cfg, "--csv", str(csv_path)], tmp_path)
    assert code == EXIT_OK
    assert rep["r_T"] == [[1.0, 0.0], [0.0, 1.0]]
    rows = list(csv.reader(csv_path.open()))
    assert rows[0][:5] == ["t", "r_00", "r_01", "r_10", "r_11"]
    assert all([float(v) for v in r[1:5]] == [1.0, 0.0, 0.0, 1.0] for r in rows[1:])


def test_csv_uses_seventeen_digits(tmp_path):
    cfg = write(tmp_path, {"fixture": "example4", "numerics": {"step": 0.1, "horizon": 1.0}})
    csv_path = tmp_path / "r.csv"
    run(["resolvent", "--config", cfg, "--csv", str(csv_path)], tmp_path)
    row = list(csv.reader(csv_path.open()))[2]
    assert float(row[0]) == 0.1
    assert row[1] == format(float(row[1]), ".17g")


def test_resolvent_overflow_guard_tilts(tmp_path):
    # alpha = 3, T = 120: alpha T > 300, the report is in the tilted frame
    cfg = write(tmp_path, {"fixture": "example5", "numerics": {"step": 0.01, "horizon": 120.0}})
    code, rep = run(["resolvent", "--config", cfg], tmp_path)
    assert code == EXIT_OK
    assert rep["tilt"] == pytest.approx(3.0)
    assert rep["rt_T"][0][0] == pytest.approx(EX5_PSTAR, rel=1e-3)


def test_fixture_example5_reference(tmp_path):
    code, rep = run(["fixture", "example5", "--paths", "0"], tmp_path)
    assert code == EXIT_OK
    assert rep["matches_reference"]
    assert rep["spectral"]["leading"][0]["Pstar"][0][0] == pytest.approx(EX5_PSTAR, abs=1e-8)


def test_fixture_mismatch_exit_code(tmp_path, monkeypatch):
    good = fixtures.FIXTURES["example1"]
    bad = lambda: dataclasses.replace(good(), expected={**good().expected, "alpha": 0.5})
    monkeypatch.setitem(fixtures.FIXTURES, "example1", bad)
    code, rep = run(["fixture", "example1", "--paths", "0"], tmp_path)
    assert code == EXIT_MISMATCH
    assert rep["checks"]["alpha"] is False


def test_simulate_is_byte_identical(tmp_path):
    cfg = write(tmp_path, {"fixture": "example3", "numerics": {"step": 0.01, "horizon": 2.0, "paths": 30, "seed": 3}})
    texts = []
    for i in range(2):
        out = tmp_path / f"s{i}.json"
        csv_path = tmp_path / f"s{i}.csv"
        assert main(["simulate", "--config", cfg, "--out", str(out), "--csv", str(csv_path)]) == EXIT_OK
        texts.append((strip_metadata(out.read_text()), csv_path.read_bytes()))
    assert texts[0] == texts[1]
    assert texts[0][0]["paths"] == 30


def test_admissibility_command(tmp_path):
    cfg = write(tmp_path, {"kernel": {"H": "exp(-(t-s))"},
                           "numerics": {"step": 0.01, "horizon": 10.0, "paths": 300, "t_max": 100.0}})
    code, rep = run(["admissibility", "--config", cfg], tmp_path)
    assert code == EXIT_OK
    assert rep["msq"]["verdict"] == "fail"
    assert rep["empirical"]["consistent"] is True


def test_admissibility_bad_expression(tmp_path):
    cfg = write(tmp_path, {"kernel": {"H": "exp(-(t-s)"}})
    code, _ = run(["admissibility", "--config", cfg], tmp_path)
    assert code == EXIT_SCHEMA


def test_verify_limit_example3(tmp_path):
    cfg = write(tmp_path, {"fixture": "example3", "numerics": {"step": 0.01, "horizon": 8.0, "paths": 600, "seed": 1}})
    csv_path = tmp_path / "v.csv"
    code, rep = run(["verify-limit", "--config", cfg, "--csv", str(csv_path)], tmp_path)
    assert code == EXIT_OK
    assert rep["report"]["checks"]["pathwise"]["decreasing_fraction"] > 0.9
    assert list(csv.reader(csv_path.open()))[0] == ["t", "rho_q10", "rho_q50", "rho_q90", "mean_square"]
