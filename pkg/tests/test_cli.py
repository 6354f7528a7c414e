import json
from pathlib import Path

import pytest

from autobahn.cli import main, parse_seeds

BASE = str(Path(__file__).resolve().parent.parent / "scenarios" / "base4.json")


def test_parse_seeds():
    assert parse_seeds(7, None) == [7]
    assert parse_seeds(None, "1..3") == [1, 2, 3]
    assert parse_seeds(None, "2") == [0, 1]


def test_run_single_seed(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--scenario", BASE, "--seed", "7", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 7 and summary["violations"] == [] and summary["liveness"]["ok"]
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == "tx_id,inject_time,finalize_time,latency_units,latency_md"
    assert (out / "trace.ndjson").stat().st_size > 0
    assert (out / "log_r0.ndjson").exists()


def test_run_seed_sweep_aggregates(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--scenario", BASE, "--seeds", "1..3", "--out", str(out), "--trace-level", "none"]) == 0
    agg = json.loads((out / "aggregate.json").read_text())
    assert agg["runs"] == 3 and agg["violations"] == 0 and agg["seeds"] == [1, 2, 3]
    assert (out / "seed_2" / "summary.json").exists()


def test_json_format(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--scenario", BASE, "--seed", "1", "--out", str(out), "--format", "json", "--mode", "sequential"]) == 0
    rows = json.loads((out / "metrics.json").read_text())
    assert rows and set(rows[0]) == {"tx_id", "inject_time", "finalize_time", "latency_units", "latency_md"}


def test_malformed_scenario_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n": 5}')
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "scenario error at n" in capsys.readouterr().err
    assert main(["run", "--scenario", str(tmp_path / "missing.json")]) == 2
    assert main(["run"]) == 2
    assert main(["run", "--scenario", BASE, "--k", "0", "--out", str(tmp_path / "o")]) == 2


def test_verify_clean_and_mutated(tmp_path, capsys):
    assert main(["verify", "safety", "--seeds", "3"]) == 0
    assert "safety: PASS" in capsys.readouterr().out
    code = main(["verify", "safety", "--seeds", "40", "--mutation", "double_vote", "--out", str(tmp_path)])
    assert code == 1
    assert "safety: FAIL" in capsys.readouterr().out
    ce = json.loads((tmp_path / "counterexample_safety.json").read_text())
    assert ce["protocol"]["mutations"] == ["double_vote"]


def test_verify_unknown_mutation_exits_2():
    assert main(["verify", "safety", "--seeds", "1", "--mutation", "nonsense"]) == 2


@pytest.fixture
def two_traces(tmp_path):
    for seed in (1, 1, 2):
        d = tmp_path / f"t{len(list(tmp_path.iterdir()))}"
        main(["run", "--scenario", BASE, "--seed", str(seed), "--out", str(d)])
    return [tmp_path / f"t{i}" / "trace.ndjson" for i in range(3)]


def test_trace_diff(two_traces, tmp_path):
    a, b, c = map(str, two_traces)
    assert main(["trace-diff", a, b]) == 0
    assert main(["trace-diff", a, c]) == 1
    cut = tmp_path / "cut.ndjson"
    cut.write_text(Path(a).read_text()[:-5])
    assert main(["trace-diff", a, str(cut)]) == 2
