import csv
import io
import json
import math

import pytest

from krillwalk.cli import RunConfig, main, parse_config
from krillwalk.model import pemantle_law

PEM = "-1:0.9330127,1:0.0669873"
PEM_EXACT = pemantle_law().to_spec()


def run(argv):
    buf = io.StringIO()
    code = main(argv, stdout=buf)
    return code, buf.getvalue()


def result(text):
    return json.loads(text)["result"]


def data_lines(path):
    return [line for line in path.read_text().splitlines() if not line.startswith("#")]


def test_analyze_happy_path(capsys):
    code, out = run(["analyze", "--step", PEM, "--offspring", "const:2"])
    assert code == 0
    doc = json.loads(out)
    assert doc["config"]["params"]["step"] == PEM
    assert "config" in capsys.readouterr().err


def test_analyze_exact_pemantle_is_critical():
    code, out = run(["analyze", "--step", PEM_EXACT, "--offspring", "const:2"])
    res = result(out)
    assert code == 0 and res["verdict"] == "critical"
    assert res["lambda_star"] == pytest.approx(1.3169579, abs=1e-6)


def test_analyze_calibrate_fixes_rounded_input():
    # seven-digit p misses the critical surface by ~1e-8, well outside the 1e-9 band
    assert result(run(["analyze", "--step", PEM])[1])["verdict"] == "supercritical"
    res = result(run(["analyze", "--step", PEM, "--calibrate"])[1])
    assert res["verdict"] == "critical"
    assert res["f_star"] == pytest.approx(math.log(2), abs=1e-12)


def test_bad_probability_sum_exit_3(capsys):
    code, _ = run(["analyze", "--step", "-1:0.5,1:0.6", "--offspring", "const:2"])
    assert code == 3
    assert "1.1" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["analyze", "--step", "-1:0.5,1:"],
    ["analyze", "--step", PEM, "--offspring", "const"],
    ["analyze", "--step", PEM, "--bogus", "1"],
    ["simulate", "--step", PEM, "--trials", "many"],
    ["nonsense"],
])
def test_usage_errors_exit_2(argv):
    assert run(argv)[0] == 2


def test_span_two_only_rejected_for_dp_commands():
    span2 = "-2:0.5,2:0.5"
    assert run(["ballot", "--step", span2, "--n", "4", "--terminal", "eq:0"])[0] == 3
    assert run(["series", "--step", "-2:0.9,2:0.1", "--N", "10"])[0] == 3
    assert run(["simulate", "--step", span2, "--trials", "5", "--max-nodes", "1000"])[0] == 0


def test_ballot_output():
    code, out = run(["ballot", "--step", "-1:1/2,1:1/2", "--n", "400", "--terminal", "eq:20",
                     "--profile", "one_sided:0"])
    res = result(out)
    assert code == 0
    assert res["asymptotic"] == pytest.approx(0.002625)
    assert res["ratio"] == pytest.approx(res["probability"] / 0.002625)
    assert res["underflow_count"] == 0


def test_ballot_exact_oracle():
    code, out = run(["ballot", "--step", "-1:1/2,1:1/2", "--n", "4", "--terminal", "eq:0", "--exact"])
    res = result(out)
    assert res["exact"] == "1/8" and res["probability"] == pytest.approx(0.125)


def test_ballot_pinned_profile():
    code, out = run(["ballot", "--step", "-1:1/2,1:1/2", "--n", "1600", "--terminal", "eq:40",
                     "--profile", "fnk:40+pin:400,10"])
    res = result(out)
    assert code == 0 and res["asymptotic_kind"] == "fnksmj" and res["probability"] > 0


def test_runtime_error_writes_partial_marker(tmp_path):
    out = tmp_path / "b.json"
    code, _ = run(["ballot", "--step", "-1:1/2,1:1/2", "--n", "300", "--terminal", "ge:0",
                   "--profile", "one_sided:1000", "--state-cap", "10", "--out", str(out)])
    assert code == 1
    marker = json.loads((tmp_path / "b.json.partial").read_text())
    assert marker["error"] == "StateCapExceeded"


def test_simulate_zero_trials(tmp_path):
    emit = tmp_path / "t.csv"
    code, out = run(["simulate", "--step", PEM, "--trials", "0", "--emit", str(emit)])
    assert code == 0
    assert data_lines(emit) == ["trial,z,m_living,m_all,depth,truncated,bias_bound"]
    assert result(out)["trials"] == 0


def test_simulate_per_trial_csv(tmp_path):
    emit = tmp_path / "t.csv"
    code, out = run(["simulate", "--step", PEM, "--trials", "50", "--seed", "3", "--mode", "maxbar",
                     "--emit", str(emit)])
    assert code == 0
    rows = list(csv.DictReader(io.StringIO("\n".join(data_lines(emit)))))
    assert len(rows) == 50
    assert all(int(r["z"]) >= 1 for r in rows)
    assert all(r["m_all"] != "" and float(r["bias_bound"]) >= 0 for r in rows)
    meta = json.loads((tmp_path / "t.csv.meta.json").read_text())
    assert "wall_clock_seconds" in meta and meta["seed"] == 3


def test_simulate_spine_mode():
    code, out = run(["simulate", "--step", PEM, "--trials", "100000", "--seed", "2", "--mode", "spine",
                     "--spine-n", "1"])
    res = result(out)
    assert abs(res["alive_frequency"] - 0.0669873) <= 3 * res["alive_se"]


def test_tails_beyond_censoring_exit_3():
    assert run(["tails", "--target", "z", "--step", PEM, "--trials", "100", "--max-nodes", "500",
                "--thresholds", "100,1000"])[0] == 3


def test_tails_csv_identical_across_threads(tmp_path):
    paths = []
    for threads in (1, 3):
        p = tmp_path / f"z{threads}.csv"
        code, _ = run(["tails", "--target", "z", "--step", PEM, "--trials", "50000", "--seed", "7",
                       "--max-nodes", "10000", "--thresholds", "10,100,1000", "--threads", str(threads),
                       "--out", str(p)])
        assert code == 0
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    text = paths[0].read_text()
    assert text.startswith("# krillwalk ") and "# seed 7" in text


@pytest.mark.parametrize("target", ["m", "zlogz", "profile"])
def test_tails_other_targets(tmp_path, target):
    p = tmp_path / "out.json"
    th = {"m": "1,2,3", "zlogz": "100,1000", "profile": ""}[target]
    code, _ = run(["tails", "--target", target, "--step", PEM, "--trials", "10000", "--seed", "1",
                   "--thresholds", th, "--out", str(p)])
    assert code == 0
    doc = json.loads(p.read_text())
    assert doc["config"]["params"]["target"] == target


def test_config_file_and_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\ntrials = 123\nmax-nodes = 4000\nseed = 5\n")
    env = {"KRILLWALK_SEED": "77"}
    c = parse_config(["tails", "--config", str(cfg), "--step", PEM, "--trials", "9"], env=env)
    assert c.trials == 9 and c.max_nodes == 4000 and c.seed == 5
    cfg.write_text("trials = 123\n")
    assert parse_config(["tails", "--config", str(cfg), "--step", PEM], env=env).seed == 77
    assert parse_config(["tails", "--step", PEM], env={}).seed == 0


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("trials = 1\nwidth = 3\n")
    assert run(["tails", "--config", str(cfg), "--step", PEM])[0] == 2


def test_run_config_roundtrip():
    c = parse_config(["simulate", "--step", PEM, "--trials", "10", "--seed", "4"], env={})
    text = c.to_json()
    assert RunConfig.from_json(text).to_json() == text
