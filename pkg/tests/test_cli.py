import csv
import json

import numpy as np
import pytest

from distfair.cli import ConfigError, load_config, main, parse_delta_grid
from distfair.datamodel import load_csv
from distfair.decision import baseline_accuracy
from distfair.model import ModelSpec, labels_for, load, predict_dataset
from distfair.optimizer import FitConfig, fit

CONFIG = """
seed = 3

[generate]
n_noise = 2
beta_mu = [0.6, -0.5]
beta_sigma2 = [0.4, -0.3]

[fit]
lambda = 1e-3
max_epochs = 400
tol = 1e-10

[decision]
delta_grid = "0:0.5:0.1"
"""


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "run.toml"
    cfg.write_text(CONFIG)
    assert main(["generate", "--config", str(cfg), "--n", "600", "--out", str(d / "train.csv")]) == 0
    assert main(["generate", "--config", str(cfg), "--n", "400", "--seed", "4", "--out", str(d / "test.csv")]) == 0
    assert main(["fit", "--config", str(cfg), "--data", str(d / "train.csv"), "--out", str(d / "m.json")]) == 0
    return d, cfg


def test_generate_is_reproducible(run, tmp_path):
    d, cfg = run
    assert main(["generate", "--config", str(cfg), "--n", "600", "--out", str(tmp_path / "again.csv")]) == 0
    assert (tmp_path / "again.csv").read_bytes() == (d / "train.csv").read_bytes()
    man = json.loads((d / "train.csv.manifest.json").read_text())
    assert man["command"] == "generate" and man["n"] == 600


def test_cli_fit_equals_library(run):
    d, cfg = run
    rc = load_config(cfg)
    data = load_csv(d / "train.csv", rc.schema)
    lib = fit(ModelSpec.from_schema(rc.schema, "gamma"), data, FitConfig(lam=1e-3, max_epochs=400, tol=1e-10, seed=3))
    np.testing.assert_array_equal(load(d / "m.json").coef_matrix(), lib.coef_matrix())


def test_sweep_full_coverage_row_is_baseline(run):
    d, cfg = run
    out = d / "curve.csv"
    assert main(["sweep", "--config", str(cfg), "--model", str(d / "m.json"),
                 "--data", str(d / "test.csv"), "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 6 * 5
    last = [r for r in rows if r["group"] == "overall" and float(r["delta"]) == 0.5][0]
    rc = load_config(cfg)
    test = load_csv(d / "test.csv", rc.schema)
    pred = predict_dataset(load(d / "m.json"), test)
    y = labels_for(test)
    assert float(last["prop_classified"]) == 1.0
    assert float(last["accuracy"]) == baseline_accuracy(pred.prob, y)
    # confusion-matrix route
    yhat = pred.prob > 0.5
    tp, tn = np.sum(yhat & (y == 1)), np.sum(~yhat & (y == 0))
    assert float(last["accuracy"]) == pytest.approx((tp + tn) / len(y), abs=1e-15)


def test_predict_writes_one_row_per_record(run):
    d, cfg = run
    out = d / "pred.csv"
    assert main(["predict", "--config", str(cfg), "--model", str(d / "m.json"),
                 "--data", str(d / "test.csv"), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "row_id,group,mu,sigma2,prob,label" and len(lines) == 401


def test_decide_half_gives_empty_rejections(run):
    d, cfg = run
    out = d / "routing"
    assert main(["decide", "--config", str(cfg), "--model", str(d / "m.json"), "--data", str(d / "test.csv"),
                 "--delta", "0.5", "--out", str(out)]) == 0
    assert len((out / "rejected.csv").read_text().splitlines()) == 1
    assert (out / "manifest.json").exists()


def test_tune_writes_table(run):
    d, cfg = run
    out = d / "tuned.json"
    assert main(["tune", "--config", str(cfg), "--data", str(d / "train.csv"), "--out", str(out)]) == 0
    rows = list(csv.DictReader((d / "tuned.tune.csv").open()))
    assert len(rows) == 20 and sum(int(r["selected"]) for r in rows) == 1


def test_audit_files(run):
    d, cfg = run
    out = d / "audit"
    assert main(["audit", "--config", str(cfg), "--model", str(d / "m.json"),
                 "--data", str(d / "test.csv"), "--out", str(out)]) == 0
    assert len((out / "curves_groups.csv").read_text().splitlines()) == 1 + 6 * 5
    assert "inputs" in json.loads((out / "manifest.json").read_text())


def test_config_errors_are_enumerated(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('seed = -1\nfamily = "poisson"\n[fit]\nlambda = -2\n[decision]\ndelta_grid = "0:0.9:0.1"\n')
    with pytest.raises(ConfigError) as e:
        load_config(bad)
    assert len(e.value.problems) >= 4
    rc = main(["fit", "--config", str(bad), "--data", "x.csv", "--out", str(tmp_path / "m.json")])
    assert rc == 2
    err = capsys.readouterr().err.splitlines()
    assert err[0].startswith("distfair-error command=fit kind=config message=")


def test_runtime_errors_exit_one(run, tmp_path, capsys):
    d, cfg = run
    rc = main(["predict", "--config", str(cfg), "--model", str(tmp_path / "none.json"),
               "--data", str(d / "test.csv"), "--out", str(tmp_path / "p.csv")])
    assert rc == 1
    assert "distfair-error command=predict" in capsys.readouterr().err


def test_parse_delta_grid():
    np.testing.assert_allclose(parse_delta_grid("0:0.5:0.25"), [0, 0.25, 0.5])
    np.testing.assert_allclose(parse_delta_grid("0.1, 0.3"), [0.1, 0.3])
    assert len(parse_delta_grid("0:0.5:0.005")) == 101
