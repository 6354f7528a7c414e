import csv
import io
import json

import pytest

from autobahn.harness import (
    LANE_SHIFT,
    Metrics,
    ScenarioError,
    build_scenario,
    check_liveness,
    injection_schedule,
    load_scenario,
    measure_hangover,
    run_scenario,
    tx_lane,
)
from autobahn.replica import Timing
from autobahn.sim_net import to_ticks


def test_defaults():
    scn = build_scenario({"n": 4})
    p = scn.protocol
    assert (p.mode, p.k, p.coverage, p.fast_path, p.view_timer) == ("parallel", 4, None, True, None)
    assert scn.quorum.consensus_quorum == scn.n - scn.quorum.f
    assert Timing.from_config(p, to_ticks(scn.delta)).view_timer == to_ticks(10 * scn.delta)
    assert scn.delta == 1.0 and scn.horizon == 100.0


def test_bad_replica_count():
    with pytest.raises(ScenarioError) as e:
        build_scenario({"n": 5})
    assert e.value.path == "n"


def test_schedule_past_horizon_rejected():
    doc = {"n": 4, "horizon": 20, "faults": {"partitions": [{"groups": [[0, 1], [2, 3]], "start": 5, "end": 25}]}}
    with pytest.raises(ScenarioError) as e:
        build_scenario(doc)
    assert e.value.path == "faults/partitions/0"


def test_schema_errors_name_the_field():
    with pytest.raises(ScenarioError) as e:
        build_scenario({"n": 4, "protocol": {"modee": "parallel"}})
    assert e.value.path == "protocol"
    with pytest.raises(ScenarioError) as e:
        build_scenario({"n": 4, "load": {"injections": [{"time": 1, "lane": 9}]}})
    assert e.value.path == "load/injections/0/lane"
    with pytest.raises(ScenarioError):
        build_scenario({"n": 4, "faults": {"byzantine": [{"replica": 0, "mode": "withhold"}]}})


def test_load_scenario_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text('{"n": 7, "seed": 3}')
    assert load_scenario(str(p)).n == 7
    p.write_text("{nope")
    with pytest.raises(ScenarioError):
        load_scenario(str(p))


def test_scenario_round_trips_through_dict():
    scn = build_scenario({"n": 4, "faults": {"silences": [{"replica": 1, "start": 0}]}})
    d = scn.to_dict()
    json.dumps(d)
    assert d["faults"]["silences"][0]["end"] is None


def test_injection_schedule_deterministic():
    doc = {"n": 4, "seed": 5, "horizon": 20, "load": {"rate": 3, "process": "poisson"}}
    a = injection_schedule(build_scenario(doc))
    assert a == injection_schedule(build_scenario(doc))
    assert a != injection_schedule(build_scenario({**doc, "seed": 6}))
    assert all(0 <= t < 20 for t, _, _ in a)


def test_fixed_rate_schedule_counts():
    scn = build_scenario({"n": 4, "horizon": 10, "load": {"rate": 4, "interval": 0.5, "lanes": [2], "stop": 5}})
    sched = injection_schedule(scn)
    assert {l for _, l, _ in sched} == {2}
    assert sum(c for *_, c in sched) == 20


def test_tx_lane():
    assert tx_lane((3 << LANE_SHIFT) | 17) == 3


def test_hangover_without_blip_is_zero():
    h = measure_hangover(Metrics(1.0), None, None)
    assert (h.backlog, h.excess) == (0.0, 0.0)


def test_hangover_backlog_and_unfinished():
    m = Metrics(1.0)
    m.inject = {1: to_ticks(1), 2: to_ticks(12)}
    m.final = {1: to_ticks(4), 2: to_ticks(18)}
    assert measure_hangover(m, 10.0, 15.0).backlog == 3.0
    del m.final[2]
    assert measure_hangover(m, 10.0, 15.0).backlog == float("inf")


def small_run(**extra):
    doc = {"n": 4, "horizon": 40, "load": {"rate": 4, "batch": 16, "stop": 20}, "protocol": {"standalone_poa": True}}
    doc.update(extra)
    return run_scenario(build_scenario(doc))


def test_liveness_fault_free_all_view_zero():
    # load runs to the horizon, so no slot idles waiting for coverage
    res = small_run(load={"rate": 4, "batch": 16})
    rep = check_liveness(res, cutoff=30)
    assert rep.ok and rep.unfinalized == 0
    assert len(rep.worst_view) > 10 and set(rep.worst_view.values()) == {0}


def test_liveness_flags_unfinalized():
    res = small_run(horizon=21)
    rep = check_liveness(res)
    assert not rep.ok and rep.unfinalized > 0
    assert check_liveness(res, correct_lanes=[]).ok


def test_silent_leader_slot_needs_one_view_change():
    res = small_run(horizon=60, faults={"silences": [{"replica": 3, "start": 0}]})
    rep = check_liveness(res, correct_lanes=[0, 1, 2])
    assert rep.ok
    assert rep.worst_view[3] == 1
    assert all(v == 0 for s, v in rep.worst_view.items() if s in (1, 2, 4, 5))


def test_metrics_csv_columns():
    res = small_run()
    buf = io.StringIO()
    res.metrics.write_csv(buf)
    rows = list(csv.DictReader(io.StringIO(buf.getvalue())))
    assert list(rows[0]) == ["tx_id", "inject_time", "finalize_time", "latency_units", "latency_md"]
    assert len(rows) == 4 * 4 * 20


def test_throughput_accounting():
    res = small_run()
    s = res.summary()
    assert s["injected"] == s["finalized"] + s["pending"] == 320
    assert s["pending"] == 0 and s["violations"] == []
    # every replica logs the same sequence of transactions
    logs = [[e.dig for e in r.log.entries] for r in res.replicas]
    assert all(l == logs[0] for l in logs)
    assert sum(len(e.proposal.batch) for e in res.replicas[0].log.entries) >= 320
