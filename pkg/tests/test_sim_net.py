import pytest

from autobahn.consensus import TipRequest
from autobahn.core import GENESIS_DIGEST, KeyRing
from autobahn.data_lane import make_tx
from autobahn.harness import ScenarioError, build_scenario, run_scenario
from autobahn.sim_net import (
    DelayModel,
    DropRule,
    FaultSchedule,
    Partition,
    SilentReplica,
    Simulator,
    Trace,
    WithholdData,
    kind_of,
    to_ticks,
)
from conftest import Kit

MSG = TipRequest(0, 1, GENESIS_DIGEST)  # any data-layer message will do


class Probe:
    def __init__(self, sim, me):
        self.sim, self.me = sim, me
        self.got: list[tuple[int, int]] = []
        self.fired: list[tuple[int, tuple]] = []

    def on_message(self, src, msg):
        self.got.append((self.sim.now, src))

    def on_timer(self, tid):
        self.fired.append((self.sim.now, tid))


def make_sim(n=4, **kw):
    sim = Simulator(n, **kw)
    sim.nodes = [Probe(sim, i) for i in range(n)]
    return sim


def send_at(sim, t, src, dst, msg=MSG):
    sim.call_at(to_ticks(t), lambda: sim.send(src, dst, msg))


def test_base_delay():
    sim = make_sim()
    send_at(sim, 5, 0, 1)
    sim.run(to_ticks(100))
    assert sim.nodes[1].got == [(to_ticks(6), 0)]


def test_partition_releases_at_heal():
    part = Partition(((0, 1), (2, 3)), 0.0, 20.0)
    sim = make_sim(faults=FaultSchedule(partitions=[part]))
    send_at(sim, 5, 0, 2)
    send_at(sim, 5, 0, 1)
    send_at(sim, 25, 0, 3)
    sim.run(to_ticks(100))
    assert sim.nodes[2].got == [(to_ticks(21), 0)]
    assert sim.nodes[1].got == [(to_ticks(6), 0)]
    assert sim.nodes[3].got == [(to_ticks(26), 0)]


def test_silence_drops_or_holds():
    faults = FaultSchedule(silences=[SilentReplica(0, 0.0, 10.0), SilentReplica(1, 0.0, 10.0, release=True)])
    sim = make_sim(faults=faults)
    send_at(sim, 2, 0, 3)
    send_at(sim, 2, 1, 3)
    sim.run(to_ticks(100))
    assert sim.nodes[3].got == [(to_ticks(11), 1)]


def test_silence_by_kind():
    faults = FaultSchedule(silences=[SilentReplica(0, 0.0, 10.0, kinds="consensus")])
    sim = make_sim(faults=faults)
    send_at(sim, 2, 0, 3)
    sim.run(to_ticks(100))
    assert len(sim.nodes[3].got) == 1


def test_drop_rule():
    sim = make_sim(faults=FaultSchedule(drops=[DropRule(0, 1, 1.0, 0.0, 10.0)]))
    send_at(sim, 1, 0, 1)
    send_at(sim, 1, 0, 2)
    send_at(sim, 11, 0, 1)
    sim.run(to_ticks(100))
    assert sim.nodes[1].got == [(to_ticks(12), 0)]
    assert len(sim.nodes[2].got) == 1


def test_self_delivery_is_immediate():
    sim = make_sim()
    send_at(sim, 3, 2, 2)
    sim.run(to_ticks(10))
    assert sim.nodes[2].got == [(to_ticks(3), 2)]


def test_matrix_and_bound():
    m = [[1.0, 2.0, 3.0, 1.0] for _ in range(4)]
    d = DelayModel(matrix=m, jitter=0.5)
    assert d.bound == 3.5
    assert DelayModel(delta=9.0).bound == 9.0
    sim = make_sim(delay=DelayModel(matrix=m))
    send_at(sim, 0, 1, 2)
    sim.run(to_ticks(10))
    assert sim.nodes[2].got == [(to_ticks(3), 1)]


# timers


def test_timer_cancel_before_fire():
    sim = make_sim()
    sim.call_at(0, lambda: sim.set_timer(0, ("t",), to_ticks(10)))
    sim.call_at(to_ticks(4), lambda: sim.cancel_timer(0, ("t",)))
    sim.run(to_ticks(50))
    assert sim.nodes[0].fired == []


def test_timer_fires():
    sim = make_sim()
    sim.call_at(to_ticks(1), lambda: sim.set_timer(0, ("t",), to_ticks(10)))
    sim.run(to_ticks(50))
    assert sim.nodes[0].fired == [(to_ticks(11), ("t",))]


def test_timer_rearm_last_writer_wins():
    sim = make_sim()
    sim.call_at(0, lambda: sim.set_timer(0, ("t",), to_ticks(10)))
    sim.call_at(to_ticks(2), lambda: sim.set_timer(0, ("t",), to_ticks(10)))
    sim.run(to_ticks(50))
    assert sim.nodes[0].fired == [(to_ticks(12), ("t",))]


def test_cancel_unknown_timer_is_noop():
    sim = make_sim()
    sim.cancel_timer(0, ("nope",))
    assert sim.run(10) == 0


# trace


def test_trace_hides_private_fields_and_exports_sorted():
    tr = Trace("events")
    tr.add(5, 1, "commit", {"slot": 1, "_qc": object(), "b": 2})
    assert tr.text() == '{"b":2,"ev":"commit","r":1,"slot":1,"t":5}\n'
    assert Trace("none").records == []
    with pytest.raises(ValueError):
        Trace("loud")


def test_kind_of():
    assert kind_of(MSG) == "tip_request"


# adapters


def test_withhold_data_targets_f_peers():
    kit = Kit(4)
    owner, _ = kit.grow(3, 0)
    p = owner.create_proposal([make_tx(1)])
    ad = WithholdData(3, 4, 1, KeyRing(4))
    reached = [d for d in range(3) if ad.outbound(d, p)]
    assert reached == [0]  # plus the owner itself: f+1 holders
    assert ad.outbound(1, MSG) == [MSG]


# whole runs


def one_batch_scenario(**extra):
    cfg = {
        "n": 4,
        "horizon": 40,
        "trace": "full",
        "load": {"injections": [{"time": 0, "lane": l, "count": 1} for l in range(4)]},
        "protocol": {"standalone_poa": True},
    }
    cfg.update(extra)
    return build_scenario(cfg)


def test_one_batch_per_lane_finalizes_one_slot_everywhere():
    res = run_scenario(one_batch_scenario())
    assert res.ok
    for rep in res.replicas:
        assert rep.finalized >= 1
        assert sorted((e.lane, e.pos) for e in rep.log.entries) == [(l, 1) for l in range(4)]
    assert res.metrics.summary()["finalized"] == 4


def test_same_seed_same_trace():
    a = run_scenario(one_batch_scenario(seed=3, delay={"base": 1, "jitter": 0.5})).trace.text()
    b = run_scenario(one_batch_scenario(seed=3, delay={"base": 1, "jitter": 0.5})).trace.text()
    c = run_scenario(one_batch_scenario(seed=4, delay={"base": 1, "jitter": 0.5})).trace.text()
    assert a == b and a != c


def test_too_many_byzantine_rejected():
    with pytest.raises(ScenarioError):
        build_scenario({"n": 4, "faults": {"byzantine": [{"replica": 0, "mode": "equivocate"}, {"replica": 1, "mode": "equivocate"}]}})


def test_deliveries_within_delta_when_synchronous():
    scn = one_batch_scenario(seed=2, delay={"base": 1, "jitter": 0.4})
    res = run_scenario(scn)
    bound = to_ticks(scn.delta)
    sends = [(t, f) for t, r, k, f in res.trace.records if k == "send"]
    assert sends
    assert all(f["at"] - t <= bound for t, f in sends)


def test_event_order_is_total():
    res = run_scenario(one_batch_scenario())
    times = [t for t, *_ in res.trace.records]
    assert times == sorted(times)
