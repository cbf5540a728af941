import json

import pytest

from sabayes.cli import run
from sabayes.model.encoder import read_csv


@pytest.fixture(autouse=True)
def no_seed(monkeypatch):
    monkeypatch.delenv("SABAYES_SEED", raising=False)


def _json(capsys, argv):
    code = run(argv)
    return code, json.loads(capsys.readouterr().out)


def test_posterior_summary(capsys):
    code, document = _json(capsys, ["posterior", "--kind", "fixed", "--prior", "flat", "--rule", "twosided:3.111",
                                    "--y", "3.40", "--level", "0.95"])
    assert code == 0
    summary = document["result"]["summary"]
    assert summary["mean"] == pytest.approx(1.88, abs=0.02)
    assert summary["mode"] == pytest.approx(0.74, abs=0.02)
    assert summary["ci_lo"] == pytest.approx(-0.04, abs=0.02)
    assert summary["ci_hi"] == pytest.approx(4.64, abs=0.02)
    assert document["config"]["rule"] == { "type": "twosided", "a": 3.111 }


def test_unadjusted_posterior(capsys):
    code, document = _json(capsys, ["posterior", "--prior", "flat", "--y", "3.40", "--unadjusted"])
    assert code == 0
    assert document["result"]["summary"]["ci_lo"] == pytest.approx(1.44, abs=0.01)


def test_bh_command(capsys, fixtures):
    code, document = _json(capsys, ["bh", "--pvalues", str(fixtures / "pvalues.csv"), "--q", "0.1"])
    assert code == 0
    assert document["result"]["rejected"] == [0, 1]


def test_fcr_command_writes_csv(fixtures, tmp_path):
    output = tmp_path / "fcr.csv"
    assert run(["fcr", "--selected", str(fixtures / "selected.csv"), "--q", "0.05", "--m", "100000",
                "--output", str(output)]) == 0
    _, table = read_csv(output)
    assert table["index"].tolist() == [12647, 4]
    assert (table["lo"] < table["hi"]).all()


def test_calibrate_from_a_model_file(capsys, fixtures):
    code, document = _json(capsys, ["calibrate", "--model", str(fixtures / "example1.json"), "--family",
                                    "twosided", "--q", "0.1", "--bracket", "2", "4", "--points", "21"])
    assert code == 0
    assert document["result"]["rule"]["a"] == pytest.approx(2.915, abs=0.01)
    assert document["result"]["risk"]["risk"] == pytest.approx(0.1, abs=0.003)


def test_unreachable_calibration_reports_the_risk_range(capsys, fixtures):
    code, document = _json(capsys, ["calibrate", "--model", str(fixtures / "example1.json"), "--family",
                                    "twosided", "--q", "0.9", "--bracket", "2", "4", "--points", "5"])
    assert code == 1
    assert document["error"] == "CalibrationError"
    lo, hi = document["risk_range"]
    assert 0 < lo < hi < 0.9


def test_simulate_with_a_seed(tmp_path):
    output = tmp_path / "draws.csv"
    argv = ["simulate", "--prior", '{"type": "normal", "var": 4}', "--m", "100", "--seed", "3",
            "--output", str(output)]
    assert run(argv) == 0
    config, table = read_csv(output)
    assert config["seed"] == 3
    assert list(table.columns) == ["theta", "y"]
    assert len(table) == 100
    again = tmp_path / "again.csv"
    assert run(argv[:-1] + [str(again)]) == 0
    assert read_csv(again)[1].equals(table)


def test_simulate_needs_a_seed(capsys):
    code, document = _json(capsys, ["simulate", "--prior", "{\"type\": \"laplace\", \"rate\": 1}", "--m", "10"])
    assert code == 1
    assert document["error"] == "ConfigurationError"
    assert "seed" in document["message"]


def test_errors_are_json_documents(capsys):
    code, document = _json(capsys, ["posterior", "--prior", "flat", "--y", "3.40"])
    assert code == 1
    assert document == { "error": "ConfigurationError", "message": "rule is required for this command" }
    code, document = _json(capsys, ["posterior", "--prior", '{"type": "laplace", "rate": -2}', "--rule",
                                    "whole", "--y", "1"])
    assert code == 1
    assert document["error"] == "ConfigurationError"


@pytest.mark.parametrize("argv", [["posterior"], ["shrink"], ["bh", "--q", "0.1"], []])
def test_usage_errors(argv, capsys):
    assert run(argv) == 2
    capsys.readouterr()


def test_figure_command(tmp_path):
    output = tmp_path / "figure3.csv"
    assert run(["figure", "3", "--output", str(output)]) == 0
    _, table = read_csv(output)
    assert len(table) > 0
    assert run(["figure", "1"]) == 1
