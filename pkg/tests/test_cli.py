import csv
import json

import numpy as np
import pytest

from _toy import toy_study
from strifle.cli import RunConfig, fit_study, format_bias, main, parse_config
from strifle.estimators import Tuning
from strifle.io import DataValidationError, Sidecar, read_study_csv, write_study_csv
from strifle.solver import CVConfig

SIM = {"scenario": "C1", "reps": 2, "p": 10, "q": 3, "n_T": 40, "N_T": 150, "n_S": 60, "N_S": 150, "n_eval": 300, "batch_size": 1000}
BASE = {"sim": SIM, "methods": ["SUP"], "master_seed": 3, "oracle": {"oracle_n": 20000}, "cv": {"n_lambda": 5, "folds": 3}}


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def _numeric_payload(path, drop=("seconds",)):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: v for k, v in r.items() if k not in drop} for r in rows]


# io ------------------------------------------------------------------------------


def test_csv_roundtrip_is_bit_exact(tmp_path):
    data = toy_study(0, n_T=7, N_T=5, n_S=6, N_S=4)
    sc = write_study_csv(tmp_path / "d.csv", data, tmp_path / "d.json")
    back = read_study_csv(tmp_path / "d.csv", Sidecar.load(tmp_path / "d.json"))
    assert sc == Sidecar.load(tmp_path / "d.json")
    for a, b in zip(data.blocks, back.blocks):
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.S, b.S)
        if a.labeled:
            np.testing.assert_array_equal(a.y, b.y)


def test_csv_reader_validation(tmp_path):
    side = {"population_col": "pop", "labeled_col": "lab", "y_col": "y", "x_cols": ["x1"], "s_cols": []}
    (tmp_path / "a.csv").write_text("pop,lab,y,x1\ntarget,1,,0.5\n")
    with pytest.raises(DataValidationError) as err:
        read_study_csv(tmp_path / "a.csv", Sidecar.from_dict(side))
    assert err.value.field == "y"
    (tmp_path / "b.csv").write_text("pop,lab,y,x1\nmars,1,1,0.5\n")
    with pytest.raises(DataValidationError):
        read_study_csv(tmp_path / "b.csv", Sidecar.from_dict(side))
    with pytest.raises(DataValidationError):
        Sidecar.from_dict({**side, "extra": 1})
    (tmp_path / "c.csv").write_text("pop,lab,y\nS,0,,\n")
    with pytest.raises(DataValidationError):
        read_study_csv(tmp_path / "c.csv", Sidecar.from_dict(side))


def test_sidecar_aliases(tmp_path):
    side = Sidecar.from_dict({"population_col": "pop", "labeled_col": "lab", "y_col": "y", "x_cols": ["x1"], "s_cols": []})
    (tmp_path / "a.csv").write_text("pop,lab,y,x1\nT,true,1,0.5\nS,no,,2.0\n0,1,0,1.5\n")
    d = read_study_csv(tmp_path / "a.csv", side)
    assert (d.n_T, d.N_T, d.n_S, d.N_S) == (2, 0, 0, 1)
    np.testing.assert_array_equal(d.target_labeled.X, [[1.0, 0.5], [1.0, 1.5]])


# config ----------------------------------------------------------------------


def test_parse_config_validation():
    with pytest.raises(ValueError) as err:
        parse_config({**BASE, "methods": ["SUP", "Oracle"]}, "simulate")
    assert err.value.field == "methods"
    with pytest.raises(ValueError):
        parse_config({**BASE, "bogus": 1}, "simulate")
    with pytest.raises(ValueError):
        parse_config({**BASE, "sim": {**SIM, "scenario": "C7"}}, "simulate")
    with pytest.raises(ValueError):
        parse_config({**BASE, "mode": "fit"}, "simulate")
    rc = parse_config({**BASE, "methods": "STRIFLE,SUP"}, "simulate")
    assert rc.methods == ("SUP", "STRIFLE") and rc.sim.seed == 3


def test_format_bias():
    assert format_bias(0.0097) == "0.97"
    assert format_bias(0.0) == "0.00"


# simulate ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def sim_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    cfg = _write(root / "cfg.json", {**BASE, "export_data": True, "oracle": {"oracle_n": 20000, "cache_dir": str(root / "oc")}})
    rc1 = main(["simulate", "--config", cfg, "--out", str(root / "a")])
    rc2 = main(["simulate", "--config", cfg, "--out", str(root / "b")])
    return root, cfg, rc1, rc2


def test_simulate_row_counts(sim_run):
    root, _, rc1, _ = sim_run
    assert rc1 == 0
    assert len(_numeric_payload(root / "a" / "reps.csv")) == 2
    agg = _numeric_payload(root / "a" / "aggregate.csv")
    assert len(agg) == 1 and agg[0]["method"] == "SUP" and agg[0]["reps_used"] == "2"
    man = json.loads((root / "a" / "manifest.json").read_text())
    assert man["master_seed"] == 3 and len(man["config_hash"]) == 64 and "numpy" in man["versions"]


def test_simulate_rerun_identical(sim_run):
    root, _, _, rc2 = sim_run
    assert rc2 == 0
    assert _numeric_payload(root / "a" / "reps.csv") == _numeric_payload(root / "b" / "reps.csv")
    assert (root / "a" / "aggregate.csv").read_bytes() == (root / "b" / "aggregate.csv").read_bytes()


def test_simulate_unknown_method_exit2(tmp_path, capsys):
    cfg = _write(tmp_path / "c.json", BASE)
    code = main(["simulate", "--config", cfg, "--methods", "SUP,Bogus", "--out", str(tmp_path / "o")])
    assert code == 2
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["field"] == "methods" and rec["kind"] == "validation"
    assert json.loads((tmp_path / "o" / "error.json").read_text())["exit_code"] == 2


def test_bad_config_file_exit2(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["simulate", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 2


def test_runtime_failure_exit1(tmp_path, monkeypatch):
    import strifle.cli as cli

    def boom(rc, out):
        raise RuntimeError("disk on fire")

    monkeypatch.setitem(cli.COMMANDS, "oracle", boom)
    cfg = _write(tmp_path / "c.json", BASE)
    assert main(["oracle", "--config", cfg, "--out", str(tmp_path / "o")]) == 1


def test_oracle_command(tmp_path):
    cfg = _write(tmp_path / "c.json", {**BASE, "oracle": {"oracle_n": 20000, "cache_dir": str(tmp_path / "oc")}})
    assert main(["oracle", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    orc = json.loads((tmp_path / "o" / "oracle.json").read_text())
    assert len(orc["beta0"]) == 11 and orc["how"]["grad_norm"] < 1e-10


# fit -------------------------------------------------------------------------------


def _fit_cfg(root, csv_path, side_path, **kw):
    return {"data": {"csv": str(csv_path), "sidecar": str(side_path)}, "methods": ["SUP", "SAS", "CS", "Meta", "STRIFLE"],
            "master_seed": 5, "cv": {"n_lambda": 8}, **kw}


def test_fit_roundtrip_matches_in_process(sim_run, tmp_path):
    root = sim_run[0]
    csv_path, side_path = root / "a" / "data_rep0000.csv", root / "a" / "data_rep0000.sidecar.json"
    cfg = _fit_cfg(root, csv_path, side_path)
    assert main(["fit", "--config", _write(tmp_path / "f.json", cfg), "--out", str(tmp_path / "o")]) == 0
    got = json.loads((tmp_path / "o" / "estimates.json").read_text())
    # in-process: same data object straight from the simulator
    from strifle.simulation import SimConfig, replication_study, population_scaling

    sim, _ = replication_study(SimConfig(**SIM, seed=3), 0, population_scaling(10, 3, 0.0))
    ref = fit_study(sim.data, parse_config(cfg, "fit"))
    for m, est in ref["methods"].items():
        np.testing.assert_allclose(got["methods"][m]["beta"], est["beta"], rtol=0, atol=1e-10)
    strifle = got["methods"]["STRIFLE"]
    assert strifle["rho"] in (0, 1)
    assert got["transfer_decision"]["rho"] == strifle["rho"]


def test_fit_destandardizes_coefficients(tmp_path):
    data = toy_study(1, n_T=80, link="identity", q=0)
    write_study_csv(tmp_path / "d.csv", data, tmp_path / "d.json")
    cfg = _fit_cfg(tmp_path, tmp_path / "d.csv", tmp_path / "d.json", methods=["SUP"], link="identity",
                   cv={"lam": 0.0}, solver={"tol": 1e-14, "grad_tol": 1e-11, "max_iter": 200000})
    assert main(["fit", "--config", _write(tmp_path / "f.json", cfg), "--out", str(tmp_path / "o")]) == 0
    beta = json.loads((tmp_path / "o" / "estimates.json").read_text())["methods"]["SUP"]["beta"]
    TL = data.target_labeled
    np.testing.assert_allclose(beta, np.linalg.lstsq(TL.X, TL.y, rcond=None)[0], atol=1e-6)


def test_fit_missing_label_exit2(tmp_path):
    side = {"population_col": "pop", "labeled_col": "lab", "y_col": "y", "x_cols": ["x1"], "s_cols": []}
    (tmp_path / "a.csv").write_text("pop,lab,y,x1\ntarget,1,,0.5\n")
    _write(tmp_path / "a.json", side)
    cfg = _fit_cfg(tmp_path, tmp_path / "a.csv", tmp_path / "a.json")
    assert main(["fit", "--config", _write(tmp_path / "f.json", cfg), "--out", str(tmp_path / "o")]) == 2


def test_fit_missing_file_exit2(tmp_path):
    cfg = _fit_cfg(tmp_path, tmp_path / "nope.csv", tmp_path / "nope.json")
    assert main(["fit", "--config", _write(tmp_path / "f.json", cfg), "--out", str(tmp_path / "o")]) == 2


def test_fit_without_surrogates(tmp_path):
    data = toy_study(2, q=0, N_T=300, N_S=300, n_T=60, n_S=80)
    write_study_csv(tmp_path / "d.csv", data, tmp_path / "d.json")
    cfg = _fit_cfg(tmp_path, tmp_path / "d.csv", tmp_path / "d.json", standardize="global")
    assert main(["fit", "--config", _write(tmp_path / "f.json", cfg), "--out", str(tmp_path / "o")]) == 0
    got = json.loads((tmp_path / "o" / "estimates.json").read_text())
    assert got["sizes"]["q"] == 0
    assert all(np.all(np.isfinite(m["beta"])) for m in got["methods"].values())


# report ------------------------------------------------------------------------------


def _agg(path, rows):
    cols = ("scenario", "iota", "n_S", "method", "abs_bias", "l2_err", "auc", "reps_used", "rho_rate")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        w.writerows(rows)
    return str(path)


def test_report_formats_and_merges(tmp_path, capsys):
    a = _agg(tmp_path / "a.csv", [["C1", "0.0", "1200", "STRIFLE", "0.0097", "0.583", "0.801", "100", "0.95"]])
    b = _agg(tmp_path / "b.csv", [["C3", "0.0", "1200", "CS", "0.02", "1.1", "0.66", "100", ""]])
    assert main(["report", a, b, "--out", str(tmp_path / "o")]) == 0
    with open(tmp_path / "o" / "report.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["abs_bias_x100"] == "0.97" and rows[0]["l2_err"] == "0.58" and rows[0]["auc"] == "0.80"
    assert len(rows) == 2
    assert "0.97" in capsys.readouterr().out


def test_report_identity_on_one_file(sim_run, tmp_path):
    root = sim_run[0]
    assert main(["report", str(root / "a" / "aggregate.csv"), "--out", str(tmp_path / "o")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "o" / "report.csv")))
    src = list(csv.DictReader(open(root / "a" / "aggregate.csv")))
    assert [r["method"] for r in rows] == [r["method"] for r in src]
    assert rows[0]["abs_bias_x100"] == format_bias(float(src[0]["abs_bias"]))


def test_report_duplicates_exit2(tmp_path):
    row = ["C1", "0.0", "1200", "SUP", "0.01", "0.9", "0.75", "100", ""]
    a = _agg(tmp_path / "a.csv", [row])
    b = _agg(tmp_path / "b.csv", [row])
    assert main(["report", a, b, "--out", str(tmp_path / "o")]) == 2
    assert main(["report", "--out", str(tmp_path / "o")]) == 2


def test_env_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("STRIFLE_OUT", str(tmp_path / "envout"))
    a = _agg(tmp_path / "a.csv", [["C1", "0.0", "1200", "SUP", "0.01", "0.9", "0.75", "100", ""]])
    assert main(["report", a]) == 0
    assert (tmp_path / "envout" / "report.csv").exists()


def test_usage_error_exit2():
    assert main(["nonsense"]) == 2
