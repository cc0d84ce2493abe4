import json
import logging
import os

import numpy as np
import pandas as pd
import pytest

from klsens.cli import main
from klsens.cli.commands import EXIT_BUDGET, EXIT_INPUT, EXIT_OK, EXIT_REGIME, resolve_seed
from klsens.cost import table_cost
from klsens.errors import ValidationError
from klsens.expansion import derive_exact
from klsens.model import FiniteDistribution

from .testutils import finite_experiment, last_json_line, write_experiment

TABLE = [[0.1, 0.7, 0.2], [0.9, 0.4, 0.0], [0.3, 0.8, 0.6]]


def test_analyze_exact(tmp_path, monkeypatch):
    monkeypatch.delenv("KLSENS_SEED", raising=False)
    config = write_experiment(tmp_path, finite_experiment(TABLE, eta=[0.0, 0.01, 0.04]))
    out = tmp_path / "results"
    assert main(["analyze", "--config", config, "--out", str(out)]) == EXIT_OK

    with open(out / "report.json") as f:
        report = json.load(f)
    dist = FiniteDistribution(np.array([0.0, 1.0, 2.0]), np.array([0.2, 0.5, 0.3]))
    expected = derive_exact(dist, table_cost(dist, TABLE))
    assert report["schema"] == "klsens-report/1"
    assert report["zeta1"] == pytest.approx(expected.zeta1)
    assert report["zeta2"] == pytest.approx(expected.zeta2)
    assert report["seed"] == 0

    sweep = pd.read_csv(out / "sweep.csv")
    assert len(sweep) == 3
    assert sweep["lower"].iloc[0] == pytest.approx(report["benchmark_mean"])
    assert sweep["upper"].iloc[0] == pytest.approx(report["benchmark_mean"])


def test_analyze_to_stdout(tmp_path, capsys):
    config = write_experiment(tmp_path, finite_experiment(TABLE, sense="min"))
    assert main(["analyze", "--config", config, "--eta", "0"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["sense"] == "min"
    assert report["zeta1"] < 0


def test_unknown_field(tmp_path, capsys):
    config = write_experiment(tmp_path, finite_experiment(TABLE, bogus=1))
    assert main(["analyze", "--config", config]) == EXIT_INPUT
    error = last_json_line(capsys.readouterr().err)
    assert error is not None
    assert error["error"] == "ConfigError"
    assert error["field"] == "bogus"
    with open(config) as f:
        lines = f.read().splitlines()
    assert '"bogus"' in lines[error["line"] - 1]


def test_unknown_nested_field(tmp_path, capsys):
    data = finite_experiment(TABLE)
    data["design"] = {"outer": 10, "sectons": 4}
    assert main(["analyze", "--config", write_experiment(tmp_path, data)]) == EXIT_INPUT
    error = last_json_line(capsys.readouterr().err)
    assert error["field"] == "design.sectons"


@pytest.mark.parametrize(
    "change, field",
    [
        ({"design": {"outer": "ten"}}, "design.outer"),
        ({"design": {"confidence": "high"}}, "design.confidence"),
        ({"eta": ["big"]}, "eta"),
        ({"seed": "abc"}, "seed"),
        ({"seed": -3}, "seed"),
        ({"samples": 2.5}, "samples"),
        ({"order": "2"}, "order"),
        ({"order": True}, "order"),
        ({"model": {"finite": {"atoms": ["a", "b", "c"], "probs": [0.2, 0.5, 0.3]}}}, "model.finite.atoms"),
        ({"model": {"family": "exponential", "params": {"rate": "fast"}}}, "model.params.rate"),
        ({"horizon": {"kind": "fixed", "T": "2"}}, "horizon.T"),
        ({"horizon": {"kind": "random", "mode": "independent", "tau": {"geometric": "half"}}}, "horizon.tau.geometric"),
        ({"randomized_horizon": {"t_cut": "5"}}, "randomized_horizon.t_cut"),
        ({"runtime": {"degeneracy_tol": "tiny"}}, "runtime.degeneracy_tol"),
    ],
)
def test_malformed_field(tmp_path, capsys, change, field):
    data = finite_experiment(TABLE)
    data.update(change)
    config = write_experiment(tmp_path, data)
    assert main(["analyze", "--config", config]) == EXIT_INPUT
    error = last_json_line(capsys.readouterr().err)
    assert error["error"] == "ConfigError"
    assert error["field"] == field
    if error["line"] is not None:
        with open(config) as f:
            lines = f.read().splitlines()
        assert '"' + field.rsplit(".", 1)[-1] + '"' in lines[error["line"] - 1]


def test_malformed_table(tmp_path, capsys):
    config = write_experiment(tmp_path, finite_experiment([["x", 1.0, 0.0]] * 3))
    assert main(["analyze", "--config", config]) == EXIT_INPUT
    error = last_json_line(capsys.readouterr().err)
    assert error["error"] == "ConfigError"
    assert error["field"] == "cost.table"


def test_log_levels(tmp_path):
    config = write_experiment(tmp_path, finite_experiment(TABLE))
    assert main(["analyze", "--config", config, "--eta", "0"]) == EXIT_OK
    assert logging.getLogger("klsens").level == logging.INFO
    assert main(["analyze", "--config", config, "--eta", "0", "--verbose"]) == EXIT_OK
    assert logging.getLogger("klsens").level == logging.DEBUG


def test_invalid_json(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "model": ,\n  "cost": {}\n}\n')
    assert main(["analyze", "--config", str(path)]) == EXIT_INPUT
    error = last_json_line(capsys.readouterr().err)
    assert error["error"] == "ConfigError"
    assert error["line"] == 2


def test_missing_config_file(tmp_path, capsys):
    assert main(["analyze", "--config", str(tmp_path / "nope.json")]) == EXIT_INPUT
    assert last_json_line(capsys.readouterr().err)["error"] == "FileNotFoundError"


def test_bad_arguments(capsys):
    assert main(["no-such-command"]) == EXIT_INPUT
    assert main(["analyze", "--order", "3"]) == EXIT_INPUT
    assert main(["analyze"]) == EXIT_INPUT


def test_constant_cost_is_degenerate(tmp_path, capsys):
    config = write_experiment(tmp_path, finite_experiment([[1.0] * 3] * 3))
    assert main(["analyze", "--config", config]) == EXIT_REGIME
    error = last_json_line(capsys.readouterr().err)
    assert error["error"] == "DegeneracyError"
    assert "assumption" in error


def test_truncation_budget(tmp_path, capsys):
    data = {
        "model": {"finite": {"atoms": [0.0, 1.0], "probs": [0.5, 0.5]}},
        "cost": {"kind": "running-max", "b": 0.5},
        "horizon": {"kind": "random", "mode": "independent", "tau": {"geometric": 0.5}},
        "randomized_horizon": {"t_cut": 2},
        "eta": [0.01],
    }
    assert main(["analyze", "--config", write_experiment(tmp_path, data)]) == EXIT_BUDGET
    assert last_json_line(capsys.readouterr().err)["error"] == "BudgetError"


def _mc_experiment(tmp_path):
    data = {
        "model": {"family": "exponential", "params": {"rate": 1.0}},
        "cost": {"kind": "iid-sum-tail", "y": 2.0},
        "horizon": {"kind": "fixed", "T": 2},
        "design": {"outer": 10, "inner": 3, "sections": 4},
        "samples": 200,
        "eta": [0.0, 0.01],
    }
    return write_experiment(tmp_path, data)


def test_monte_carlo_is_deterministic(tmp_path):
    config = _mc_experiment(tmp_path)
    for name in ("a", "b"):
        assert main(["analyze", "--config", config, "--seed", "5", "--threads", "1", "--out", str(tmp_path / name)]) == 0
    with open(tmp_path / "a" / "report.json") as f:
        first = json.load(f)
    with open(tmp_path / "b" / "report.json") as f:
        second = json.load(f)
    assert first == second
    assert first["zeta2"] is None
    assert first["seed"] == 5
    assert "benchmark_mean" in first["ci"]


def test_monte_carlo_order_two_is_rejected(tmp_path, capsys):
    config = _mc_experiment(tmp_path)
    assert main(["analyze", "--config", config, "--order", "2", "--threads", "1"]) == EXIT_INPUT


def test_exact1d(tmp_path, capsys):
    config = write_experiment(tmp_path, finite_experiment([0.0, 1.0, 3.0], eta=[0.0, 0.05], sense="both"))
    assert main(["exact1d", "--config", config]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert len(out["solutions"]) == 4
    assert out["solutions"][0]["optimum"] == pytest.approx(out["mean"])
    assert out["zeta1"] > 0


def test_exact1d_rejects_paths(tmp_path, capsys):
    config = write_experiment(tmp_path, finite_experiment(TABLE))
    assert main(["exact1d", "--config", config]) == EXIT_INPUT


def test_fixedpoint(tmp_path, capsys):
    config = write_experiment(tmp_path, finite_experiment(TABLE, eta=[0.001]))
    assert main(["fixedpoint", "--config", config]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    (row,) = out["solutions"]
    assert row["kl"] == pytest.approx(0.001, abs=1e-10)
    assert row["contraction_factor"] < 1


def test_oracle_compare_single_draw(tmp_path, capsys):
    config = write_experiment(tmp_path, finite_experiment([0.5, -1.0, 2.0], eta=[1e-10]))
    assert main(["oracle-compare", "--config", config]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    (row,) = out["rows"]
    assert row["fixed_point"] == pytest.approx(row["oracle"], abs=1e-8)
    assert row["expansion"] == pytest.approx(row["oracle"], abs=1e-8)


def test_oracle_compare_pairs(tmp_path, capsys):
    config = write_experiment(tmp_path, finite_experiment(TABLE, eta=[1e-4, 1e-3]))
    assert main(["oracle-compare", "--config", config, "--seed", "3"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert len(out["rows"]) == 2
    for row in out["rows"]:
        assert row["fixed_point_gap"] == pytest.approx(0.0, abs=1e-6)
        assert row["kl_at_opt"] <= row["eta"] + 1e-10


def test_queue_table(tmp_path):
    out = tmp_path / "table.csv"
    args = ["queue-table", "--servers", "1,2", "--samples", "50", "--customers", "5"]
    args += ["--outer", "3", "--inner", "2", "--sections", "3", "--threads", "1", "--out", str(out)]
    assert main(args) == EXIT_OK
    df = pd.read_csv(out)
    assert list(df["servers"]) == [1, 2]
    assert "relative_impact" in df.columns


def test_pilot(tmp_path, capsys):
    data = finite_experiment(TABLE, design={"outer": 4, "sections": 3})
    config = write_experiment(tmp_path, data)
    assert main(["pilot", "--config", config, "--inner-grid", "2,3", "--threads", "1", "--seed", "1"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("inner,")
    assert len(lines) == 3


def test_resolve_seed(monkeypatch):
    monkeypatch.setenv("KLSENS_SEED", "11")
    assert resolve_seed(3, 7) == 3
    assert resolve_seed(None, 7) == 7
    assert resolve_seed(None, None) == 11
    monkeypatch.delenv("KLSENS_SEED")
    assert resolve_seed(None, None) == 0
    monkeypatch.setenv("KLSENS_SEED", "eleven")
    with pytest.raises(ValidationError):
        resolve_seed(None, None)


def test_runtime_overrides_are_restored(tmp_path):
    from klsens.config import DefaultConfig

    before = DefaultConfig.enumeration_budget
    config = write_experiment(tmp_path, finite_experiment(TABLE, runtime={"enumeration_budget": 100}))
    assert main(["analyze", "--config", config, "--out", str(tmp_path / "out")]) == EXIT_OK
    assert DefaultConfig.enumeration_budget == before
    assert os.path.exists(tmp_path / "out" / "sweep.csv")
