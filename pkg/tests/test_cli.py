import csv
import json

import jsonschema
import numpy as np
import pytest

from psbdl.cli import RESULT_SCHEMA, ConfigError, load_config, main, parse_config, read_matrix_csv, write_matrix_csv

FAST = {"solver": {"tolerances": {"outer_max": 2, "inner_max": 20}}}


def _write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def test_simulate_writes_default_dims(tmp_path):
    assert main(["simulate", "--seed", "7", "--out", str(tmp_path / "a")]) == 0
    Y = read_matrix_csv(tmp_path / "a" / "Y.csv")
    assert Y.shape == (60, 5)
    doc = json.loads((tmp_path / "a" / "scene.json").read_text())
    assert doc["schema_version"] and doc["seed"] == 7
    assert doc["config"]["solver"]["granularity"] == 11
    with open(tmp_path / "a" / "Y.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header == ["t1", "t2", "t3", "t4", "t5"]


def test_simulate_same_seed_identical_files(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--seed", "3", "--out", str(tmp_path / d)]) == 0
    for name in ("Y.csv", "scene.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    main(["simulate", "--seed", "4", "--out", str(tmp_path / "c")])
    assert (tmp_path / "a" / "Y.csv").read_bytes() != (tmp_path / "c" / "Y.csv").read_bytes()


def test_matrix_csv_round_trip(tmp_path, rng):
    Y = rng.normal(size=(4, 3)) * 10.0 ** rng.uniform(-12, 3, (4, 3))
    write_matrix_csv(tmp_path / "y.csv", Y)
    assert np.array_equal(read_matrix_csv(tmp_path / "y.csv"), Y)
    assert b"\r" not in (tmp_path / "y.csv").read_bytes()


def test_missing_required_field_is_named(tmp_path, capsys):
    cfg = _write(tmp_path / "c.json", {"study": {"values": [1, 2]}})
    assert main(["bench", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "axis" in err and "study" in err


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="typo"):
        parse_config({"scene": {"typo": 1}})
    with pytest.raises(ConfigError, match="granularity"):
        parse_config({"solver": {"granularity": "eleven"}})


def test_config_defaults_and_overrides():
    cfg = parse_config({})
    assert (cfg.scene.M, cfg.scene.T, cfg.scene.snr) == (60, 5, 25.0)
    assert cfg.solver.granularity == 11 and cfg.solver.gamma_init == 2.0
    cfg = parse_config({"scene": {"M": 30, "sources": [[1, 2]]}, "solver": {"lambda": 0.5, "bounds": {"gamma_step": 0.2}}})
    assert cfg.scene.M == 30 and cfg.solver.K == 1
    assert cfg.solver.lam == 0.5 and cfg.solver.gamma_step == 0.2
    # resolved config parses back to itself
    again = parse_config({k: v for k, v in cfg.resolved().items()})
    assert again.solver == cfg.solver and again.scene == cfg.scene


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


def test_solve_round_trip_and_result_schema(tmp_path):
    cfg = _write(tmp_path / "c.json", FAST)
    main(["simulate", "--seed", "1", "--out", str(tmp_path / "s")])
    assert main(["solve", "--config", cfg, "--measurements", str(tmp_path / "s"), "--out", str(tmp_path / "r.json")]) == 0
    doc = json.loads((tmp_path / "r.json").read_text())
    jsonschema.validate(doc, RESULT_SCHEMA)
    assert len(doc["result"]["sources"]) == 3
    assert doc["result"]["trace"]


def test_solve_fixed_dictionary_keeps_gamma(tmp_path):
    cfg = _write(tmp_path / "c.json", {"solver": {"gamma_init": 3.25, "tolerances": {"inner_max": 20}}})
    main(["simulate", "--seed", "2", "--out", str(tmp_path / "s")])
    args = ["solve", "--config", cfg, "--measurements", str(tmp_path / "s" / "Y.csv"), "--mode", "fixed-dictionary"]
    assert main(args + ["--out", str(tmp_path / "r.json")]) == 0
    assert json.loads((tmp_path / "r.json").read_text())["result"]["gamma_hat"] == 3.25


def test_solve_dimension_mismatch_is_config_error(tmp_path):
    main(["simulate", "--seed", "2", "--out", str(tmp_path / "s")])
    Y = read_matrix_csv(tmp_path / "s" / "Y.csv")
    write_matrix_csv(tmp_path / "short.csv", Y[:-3])
    args = ["solve", "--measurements", str(tmp_path / "short.csv"), "--scene", str(tmp_path / "s" / "scene.json")]
    assert main(args + ["--out", str(tmp_path / "r.json")]) == 1


def test_solve_runtime_failure_exit_code(tmp_path, monkeypatch):
    import psbdl.cli as cli
    from psbdl.exceptions import SolverDivergence

    def boom(*a, **k):
        raise SolverDivergence("evidence went non-finite")

    monkeypatch.setattr(cli, "run_psbdl", boom)
    main(["simulate", "--seed", "2", "--out", str(tmp_path / "s")])
    assert main(["solve", "--measurements", str(tmp_path / "s"), "--out", str(tmp_path / "r.json")]) == 2


def test_crlb_entry_count(tmp_path):
    main(["simulate", "--seed", "5", "--out", str(tmp_path / "s")])
    out = tmp_path / "crlb.json"
    rc = main(["crlb", "--scene", str(tmp_path / "s" / "scene.json"), "--allow-floor", "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert len(doc["crlb_diag"]) == 3 * 3 + 60 + 1 == 70
    assert doc["labels"][9] == "gamma"
    assert doc["ple_bound"] > 0


def test_bench_rows_per_value_and_method(tmp_path):
    cfg = _write(tmp_path / "c.json", FAST)
    out = tmp_path / "b"
    rc = main(["bench", "--config", cfg, "--axis", "snr", "--values", "0,2,4,6,8,10", "--trials", "1", "--methods", "full,grid-only", "--out", str(out)])
    assert rc == 0
    doc = json.loads((out / "summary.json").read_text())
    assert len(doc["summary"]) == 6 * 2
    assert {(r["axis_value"], r["method"]) for r in doc["summary"]} == {(v, m) for v in (0, 2, 4, 6, 8, 10) for m in ("full", "grid-only")}
    rows = list(csv.DictReader((out / "trials.csv").open()))
    assert len(rows) == 12


def test_bench_bad_values(tmp_path):
    assert main(["bench", "--values", "1,x", "--out", str(tmp_path)]) == 1
    assert main(["bench", "--trials", "0", "--out", str(tmp_path)]) == 1
