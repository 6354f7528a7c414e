"""Scenarios, client load, metrics and the omniscient safety checker."""
from __future__ import annotations

import csv
import json
import math
import random
import statistics
from collections.abc import Callable, Iterable
from dataclasses import asdict, dataclass, field
from typing import IO

import jsonschema

from .config import ProtocolConfig
from .consensus import Validator
from .core import KeyRing, QuorumConfig, quorum_sizes
from .data_lane import TipRef, make_tx
from .ordering import local_chain
from .replica import Replica, Timing
from .sim_net import (
    ADAPTERS,
    BYZANTINE_MODES,
    JUNK_BIT,
    TICKS_PER_UNIT,
    ByzantineLane,
    DelayModel,
    DropRule,
    FaultSchedule,
    Partition,
    SilentReplica,
    Simulator,
    Trace,
    to_ticks,
)

SCHEMA_VERSION = "autobahn-scenario/1"
LANE_SHIFT = 40


def tx_lane(ident: int) -> int:
    return (ident >> LANE_SHIFT) & 0xFFFF


# -- scenario --------------------------------------------------------------------------


@dataclass
class Injection:
    time: float
    lane: int
    count: int = 1


@dataclass
class LoadSpec:
    """Client load; ``rate`` is transactions per unit time per lane."""

    rate: float = 0.0
    process: str = "fixed"
    interval: float = 0.5
    batch: int = 1000
    tx_size: int = 8
    lanes: list[int] | None = None
    start: float = 0.0
    stop: float | None = None
    injections: list[Injection] = field(default_factory=list)


@dataclass
class Scenario:
    n: int = 4
    horizon: float = 100.0
    seed: int = 0
    delay: DelayModel = field(default_factory=DelayModel)
    faults: FaultSchedule = field(default_factory=FaultSchedule)
    load: LoadSpec = field(default_factory=LoadSpec)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    trace: str = "events"

    @property
    def quorum(self) -> QuorumConfig:
        return quorum_sizes(self.n)

    @property
    def delta(self) -> float:
        return self.delay.bound

    @property
    def byzantine(self) -> set[int]:
        return {b.replica for b in self.faults.byzantine}

    def to_dict(self) -> dict:
        def clean(x):
            if isinstance(x, float) and math.isinf(x):
                return None
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [clean(v) for v in x]
            return x

        d = clean(asdict(self))
        d["schema"] = SCHEMA_VERSION
        return d


class ScenarioError(ValueError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


_num = {"type": "number"}
_opt_num = {"type": ["number", "null"]}
_int = {"type": "integer"}
_kinds = {"oneOf": [{"type": "string"}, {"type": "array", "items": {"type": "string"}}, {"type": "null"}]}


def _obj(props: dict, required: Iterable[str] = ()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCENARIO_SCHEMA = _obj(
    {
        "schema": {"const": SCHEMA_VERSION},
        "n": _int,
        "horizon": _num,
        "seed": _int,
        "trace": {"enum": ["full", "events", "none"]},
        "delay": _obj(
            {
                "base": _num,
                "matrix": {"type": ["array", "null"], "items": {"type": "array", "items": _num}},
                "jitter": _num,
                "delta": _opt_num,
            }
        ),
        "faults": _obj(
            {
                "partitions": {
                    "type": "array",
                    "items": _obj(
                        {"groups": {"type": "array", "items": {"type": "array", "items": _int}}, "start": _num, "end": _num},
                        ["groups", "start", "end"],
                    ),
                },
                "silences": {
                    "type": "array",
                    "items": _obj(
                        {"replica": _int, "start": _num, "end": _opt_num, "release": {"type": "boolean"}, "kinds": _kinds},
                        ["replica", "start"],
                    ),
                },
                "byzantine": {
                    "type": "array",
                    "items": _obj({"replica": _int, "mode": {"enum": list(BYZANTINE_MODES)}}, ["replica", "mode"]),
                },
                "drops": {
                    "type": "array",
                    "items": _obj(
                        {
                            "src": {"type": ["integer", "null"]},
                            "dst": {"type": ["integer", "null"]},
                            "probability": {"type": "number", "minimum": 0, "maximum": 1},
                            "start": _num,
                            "end": _opt_num,
                            "kinds": _kinds,
                        },
                        ["probability"],
                    ),
                },
            }
        ),
        "load": _obj(
            {
                "rate": {"type": "number", "minimum": 0},
                "process": {"enum": ["fixed", "poisson"]},
                "interval": {"type": "number", "exclusiveMinimum": 0},
                "batch": {"type": "integer", "minimum": 1},
                "tx_size": {"type": "integer", "minimum": 8},
                "lanes": {"type": ["array", "null"], "items": _int},
                "start": _num,
                "stop": _opt_num,
                "injections": {
                    "type": "array",
                    "items": _obj({"time": _num, "lane": _int, "count": {"type": "integer", "minimum": 1}}, ["time", "lane"]),
                },
            }
        ),
        "protocol": _obj(
            {
                "mode": {"enum": ["sequential", "parallel"]},
                "k": {"type": "integer", "minimum": 1},
                "coverage": {"type": ["integer", "null"], "minimum": 0},
                "fast_path": {"type": "boolean"},
                "fast_wait": {"type": "number", "minimum": 0},
                "optimistic_tips": {"type": "boolean"},
                "leader_tips": {"type": "boolean"},
                "view_timer": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "leader_offset": {"type": ["integer", "null"], "minimum": 1},
                "standalone_poa": {"type": "boolean"},
                "batch_cap": {"type": "integer", "minimum": 1},
                "buffer_cap": {"type": "integer", "minimum": 1},
                "view_buffer_cap": {"type": "integer", "minimum": 0},
                "sync_timeout": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "mutations": {"type": "array", "items": {"type": "string"}},
            }
        ),
    },
    ["n"],
)


def _kinds_value(v):
    return tuple(v) if isinstance(v, list) else v


def _end(v) -> float:
    return math.inf if v is None else float(v)


def build_scenario(config: dict) -> Scenario:
    """Validate a scenario document and fill in defaults."""
    try:
        jsonschema.validate(config, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ScenarioError(path, e.message) from None

    n = config["n"]
    try:
        q = quorum_sizes(n)
    except ValueError as e:
        raise ScenarioError("n", str(e)) from None
    horizon = float(config.get("horizon", 100.0))
    if horizon <= 0:
        raise ScenarioError("horizon", "must be positive")

    d = config.get("delay", {})
    delay = DelayModel(d.get("base", 1.0), d.get("matrix"), d.get("jitter", 0.0), d.get("delta"))
    if delay.matrix is not None and (len(delay.matrix) != n or any(len(r) != n for r in delay.matrix)):
        raise ScenarioError("delay/matrix", f"must be {n}x{n}")
    if delay.base <= 0 or delay.jitter < 0 or (delay.matrix and min(min(r) for r in delay.matrix) <= 0):
        raise ScenarioError("delay", "delays must be positive")

    f = config.get("faults", {})
    faults = FaultSchedule(
        partitions=[Partition(tuple(tuple(g) for g in p["groups"]), p["start"], p["end"]) for p in f.get("partitions", [])],
        silences=[
            SilentReplica(s["replica"], s["start"], _end(s.get("end")), s.get("release", False), _kinds_value(s.get("kinds", "all")))
            for s in f.get("silences", [])
        ],
        byzantine=[ByzantineLane(b["replica"], b["mode"]) for b in f.get("byzantine", [])],
        drops=[
            DropRule(r.get("src"), r.get("dst"), r["probability"], r.get("start", 0.0), _end(r.get("end")), _kinds_value(r.get("kinds")))
            for r in f.get("drops", [])
        ],
    )
    try:
        faults.validate(n, q.f)
    except ValueError as e:
        raise ScenarioError("faults", str(e)) from None
    for key, entries in (("partitions", faults.partitions), ("silences", faults.silences), ("drops", faults.drops)):
        for i, e in enumerate(entries):
            if e.start >= horizon or (not math.isinf(e.end) and e.end > horizon):
                raise ScenarioError(f"faults/{key}/{i}", f"interval [{e.start}, {e.end}] exceeds horizon {horizon}")

    ld = config.get("load", {})
    load = LoadSpec(
        rate=ld.get("rate", 0.0),
        process=ld.get("process", "fixed"),
        interval=ld.get("interval", 0.5),
        batch=ld.get("batch", 1000),
        tx_size=ld.get("tx_size", 8),
        lanes=ld.get("lanes"),
        start=ld.get("start", 0.0),
        stop=ld.get("stop"),
        injections=[Injection(i["time"], i["lane"], i.get("count", 1)) for i in ld.get("injections", [])],
    )
    for i, inj in enumerate(load.injections):
        if not 0 <= inj.lane < n:
            raise ScenarioError(f"load/injections/{i}/lane", f"replica {inj.lane} does not exist")
        if not 0 <= inj.time < horizon:
            raise ScenarioError(f"load/injections/{i}/time", "outside [0, horizon)")
    for l in load.lanes or []:
        if not 0 <= l < n:
            raise ScenarioError("load/lanes", f"replica {l} does not exist")

    try:
        proto = ProtocolConfig(**config.get("protocol", {}))
    except (TypeError, ValueError) as e:
        raise ScenarioError("protocol", str(e)) from None
    if proto.batch_cap < load.batch:
        raise ScenarioError("load/batch", "exceeds protocol batch_cap")
    if proto.coverage is not None and proto.coverage > n:
        raise ScenarioError("protocol/coverage", f"cannot exceed n={n}")

    return Scenario(
        n=n,
        horizon=horizon,
        seed=config.get("seed", 0),
        delay=delay,
        faults=faults,
        load=load,
        protocol=proto,
        trace=config.get("trace", "events"),
    )


def load_scenario(path: str) -> Scenario:
    with open(path) as fp:
        try:
            doc = json.load(fp)
        except json.JSONDecodeError as e:
            raise ScenarioError("<file>", f"invalid JSON: {e}") from None
    return build_scenario(doc)


def injection_schedule(scn: Scenario) -> list[tuple[float, int, int]]:
    """(time, lane, count) client arrivals, deterministic in the scenario seed."""
    ld = scn.load
    out = [(i.time, i.lane, i.count) for i in ld.injections]
    if ld.rate > 0:
        lanes = ld.lanes if ld.lanes is not None else list(range(scn.n))
        stop = min(ld.stop if ld.stop is not None else scn.horizon, scn.horizon)
        rng = random.Random(f"load/{scn.seed}")
        for lane in lanes:
            if ld.process == "fixed":
                acc = 0.0
                t = ld.start
                while t < stop:
                    acc += ld.rate * ld.interval
                    c = int(acc)
                    if c:
                        out.append((t, lane, c))
                        acc -= c
                    t = round(t + ld.interval, 9)
            else:
                t = ld.start + rng.expovariate(ld.rate)
                while t < stop:
                    out.append((round(t, 3), lane, 1))
                    t += rng.expovariate(ld.rate)
    out.sort(key=lambda x: (x[0], x[1]))
    return out


# -- metrics ------------------------------------------------------------------------------


class Metrics:
    """Per-transaction latency measured at the injecting replica."""

    def __init__(self, delta: float):
        self.delta = delta
        self.inject: dict[int, int] = {}
        self.final: dict[int, int] = {}
        self.commit_view: dict[int, int] = {}
        self.commit_time: dict[int, dict[int, int]] = {}
        self.propose_time: dict[tuple[int, int], int] = {}
        self.views_entered: dict[int, int] = {}
        self.sync: list[dict] = []
        self.probes = 0
        self.not_servable = 0

    def observe(self, t: int, r: int, kind: str, f: dict) -> None:
        if kind == "inject":
            for i in f["_ids"]:
                self.inject.setdefault(i, t)
        elif kind == "finalize":
            for i in f["_txs"]:
                if not i & JUNK_BIT and tx_lane(i) == r:
                    self.final.setdefault(i, t)
        elif kind == "commit":
            s = f["slot"]
            self.commit_view[s] = max(self.commit_view.get(s, 0), f["view"])
            self.commit_time.setdefault(s, {})[r] = t
        elif kind == "propose":
            self.propose_time.setdefault((f["slot"], f["view"]), t)
        elif kind == "view":
            s = f["slot"]
            self.views_entered[s] = max(self.views_entered.get(s, 0), f["view"])
        elif kind == "sync_ok":
            self.sync.append({"t": t, "replica": r, **{k: v for k, v in f.items() if not k.startswith("_")}})
        elif kind == "sync_probe":
            self.probes += 1
        elif kind == "not_servable":
            self.not_servable += 1

    def latency(self, ident: int) -> float | None:
        if ident not in self.final:
            return None
        return (self.final[ident] - self.inject[ident]) / TICKS_PER_UNIT

    def latencies(self) -> list[float]:
        return [self.latency(i) for i in sorted(self.final)]

    def rows(self) -> list[dict]:
        out = []
        for i in sorted(self.inject):
            fin = self.final.get(i)
            lat = None if fin is None else (fin - self.inject[i]) / TICKS_PER_UNIT
            out.append(
                {
                    "tx_id": i,
                    "inject_time": self.inject[i] / TICKS_PER_UNIT,
                    "finalize_time": None if fin is None else fin / TICKS_PER_UNIT,
                    "latency_units": lat,
                    "latency_md": None if lat is None else lat / self.delta,
                }
            )
        return out

    def write_csv(self, fp: IO[str]) -> None:
        w = csv.DictWriter(fp, fieldnames=["tx_id", "inject_time", "finalize_time", "latency_units", "latency_md"])
        w.writeheader()
        for row in self.rows():
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})

    def summary(self) -> dict:
        lats = self.latencies()
        return {
            "injected": len(self.inject),
            "finalized": len(self.final),
            "pending": len(self.inject) - len(self.final),
            "latency_median": statistics.median(lats) if lats else None,
            "latency_max": max(lats) if lats else None,
            "slots_committed": len(self.commit_view),
            "max_commit_view": max(self.commit_view.values(), default=0),
            "sync_exchanges": len(self.sync),
            "sync_probes": self.probes,
        }


# -- safety checking -----------------------------------------------------------------------


class SafetyViolation(AssertionError):
    def __init__(self, prop: str, detail: str):
        super().__init__(f"{prop}: {detail}")
        self.prop = prop
        self.detail = detail


class SafetyChecker:
    """Omniscient observer asserting the cross-replica invariants.

    Byzantine replicas' own events are ignored; everything else is treated as
    correct (silent replicas only lose messages, they never lie).
    """

    def __init__(self, n: int, keys: KeyRing, byzantine: set[int], strict: bool = True):
        self.q = quorum_sizes(n)
        self.keys = keys
        self.byz = set(byzantine)
        self.strict = strict
        self.violations: list[SafetyViolation] = []
        self._prep_voted: set[tuple[int, int, int]] = set()
        self._acked: set[tuple[int, int, int]] = set()
        self._vote_sets: dict[tuple[int, int, str], set[int]] = {}
        self._quorum_digs: dict[tuple[int, int], set[str]] = {}
        self._votes_by_slot: dict[int, list[tuple[int, str, int]]] = {}
        self._committed: dict[int, tuple[str, int]] = {}
        self._canon: list[tuple] = []
        self._log_len: dict[int, int] = {}
        self._data_high: dict[tuple[int, int], int] = {}
        self._car: dict[tuple[int, int], str] = {}

    def _fail(self, prop: str, detail: str) -> None:
        v = SafetyViolation(prop, detail)
        self.violations.append(v)
        if self.strict:
            raise v

    def observe(self, t: int, r: int, kind: str, f: dict) -> None:
        h = getattr(self, "_on_" + kind, None)
        if h is not None:
            h(t, r, f)

    def _on_prep_vote(self, t, r, f):
        s, v, dig = f["slot"], f["view"], f["dig"]
        if r not in self.byz:
            if (r, s, v) in self._prep_voted:
                self._fail("once_per_view", f"replica {r} prep-voted twice in slot {s} view {v}")
            self._prep_voted.add((r, s, v))
            c = self._committed.get(s)
            if c is not None and v > c[1] and f["value"] != c[0]:
                self._fail("cross_view", f"replica {r} voted a different value in slot {s} view {v}")
            self._votes_by_slot.setdefault(s, []).append((v, f["value"], r))
        voters = self._vote_sets.setdefault((s, v, dig), set())
        voters.add(r)
        if len(voters) >= self.q.consensus_quorum:
            self._quorum(s, v, dig)

    def _quorum(self, s, v, dig):
        digs = self._quorum_digs.setdefault((s, v), set())
        digs.add(dig)
        if len(digs) > 1:
            self._fail("per_view_uniqueness", f"two vote quorums for slot {s} view {v}")

    def _on_qc(self, t, r, f):
        if f["kind"] in ("prepare", "fast"):
            self._quorum(f["slot"], f["view"], f["dig"])

    def _on_confirm_ack(self, t, r, f):
        if r in self.byz:
            return
        key = (r, f["slot"], f["view"])
        if key in self._acked:
            self._fail("once_per_view", f"replica {r} acked twice in slot {f['slot']} view {f['view']}")
        self._acked.add(key)

    def _on_commit(self, t, r, f):
        if r in self.byz:
            return
        s, val, v = f["slot"], f["value"], f["view"]
        c = self._committed.get(s)
        if c is None:
            self._committed[s] = (val, v)
            for vv, value, voter in self._votes_by_slot.get(s, []):
                if vv > v and value != val:
                    self._fail("cross_view", f"replica {voter} voted a different value in slot {s} view {vv}")
        else:
            if c[0] != val:
                self._fail("agreement", f"replica {r} committed a different cut in slot {s}")
            if v < c[1]:
                self._committed[s] = (val, v)

    def _on_finalize(self, t, r, f):
        if r in self.byz:
            return
        start = f["start"]
        if start != self._log_len.get(r, 0):
            self._fail("log_prefix", f"replica {r} log jumped to index {start}")
        for i, e in enumerate(f["entries"]):
            idx = start + i
            e = tuple(e)
            if idx < len(self._canon):
                if self._canon[idx] != e:
                    self._fail("log_prefix", f"replica {r} diverges at log index {idx}")
            else:
                self._canon.append(e)
        self._log_len[r] = start + len(f["entries"])

    def _on_data_vote(self, t, r, f):
        if r in self.byz:
            return
        key = (r, f["lane"])
        high = self._data_high.get(key, 0)
        if f["pos"] != high + 1:
            self._fail("in_order_vote", f"replica {r} voted lane {f['lane']} pos {f['pos']} after {high}")
        self._data_high[key] = max(high, f["pos"])
        if f["lane"] not in self.byz:
            want = self._car.get((f["lane"], f["pos"]))
            if want is not None and want != f["dig"]:
                self._fail("lane_fork", f"correct lane {f['lane']} pos {f['pos']} has two proposals")

    def _on_adopt(self, t, r, f):
        key = (r, f["lane"])
        self._data_high[key] = max(self._data_high.get(key, 0), f["upto"])

    def _on_car(self, t, r, f):
        if r in self.byz:
            return
        key = (f["lane"], f["pos"])
        if key in self._car and self._car[key] != f["dig"]:
            self._fail("lane_fork", f"correct lane {f['lane']} proposed twice at pos {f['pos']}")
        self._car[key] = f["dig"]

    def _on_poa(self, t, r, f):
        if r in self.byz:
            return
        poa = f["_poa"]
        if len(set(f["signers"])) < self.q.poa_quorum or not poa.valid(self.keys, self.q):
            self._fail("poa_soundness", f"replica {r} formed an invalid PoA for lane {f['lane']}")

    def finish(self, replicas: list[Replica]) -> None:
        """End-of-run checks needing omniscient state (transitive availability)."""
        correct = [rep for rep in replicas if rep.me not in self.byz]
        for rep in correct:
            for lane in rep.lanes:
                poa = lane.best_poa
                if poa is None:
                    continue
                tip = TipRef(poa.lane, poa.pos, poa.dig)
                ok = any(
                    local_chain(c.lanes[poa.lane], c.log, tip, min(c.last_commit[poa.lane], poa.pos)) is not None
                    for c in correct
                    if c.lanes[poa.lane].voted >= poa.pos or c.last_commit[poa.lane] >= poa.pos
                )
                if not ok:
                    self._fail(
                        "transitive_availability",
                        f"no correct replica holds lane {poa.lane} history up to pos {poa.pos}",
                    )


class WasteMonitor:
    """Largest uncertified Byzantine-lane data held by any correct replica."""

    def __init__(self, replicas: list[Replica], byzantine: set[int]):
        self.replicas = replicas
        self.byz = sorted(byzantine)
        self.max_waste = 0
        self.where: tuple[int, int] | None = None

    def after(self, who: int) -> None:
        if who < 0 or who in self.byz:
            return
        rep = self.replicas[who]
        w = sum(rep.lanes[b].uncertified_waste(rep.last_commit[b], rep.log.by_dig) for b in self.byz)
        if w > self.max_waste:
            self.max_waste = w
            self.where = (who, rep.net.now)


# -- running ------------------------------------------------------------------------------------


@dataclass
class RunResult:
    scenario: Scenario
    sim: Simulator
    replicas: list[Replica]
    metrics: Metrics
    checker: SafetyChecker | None
    violations: list[SafetyViolation]
    events: int

    @property
    def trace(self) -> Trace:
        return self.sim.trace

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> dict:
        out = {"seed": self.scenario.seed, "n": self.scenario.n, "events": self.events}
        out.update(self.metrics.summary())
        out["violations"] = [str(v) for v in self.violations]
        return out


def run_scenario(
    scn: Scenario,
    check: bool = True,
    observers: Iterable[Callable] = (),
    after_step: Iterable[Callable] = (),
    setup: Callable[[Simulator, list[Replica]], None] | None = None,
) -> RunResult:
    q = scn.quorum
    keys = KeyRing(scn.n)
    validator = Validator(q, keys, scn.protocol)
    sim = Simulator(scn.n, scn.delay, scn.faults, scn.seed, Trace(scn.trace))
    timing = Timing.from_config(scn.protocol, to_ticks(scn.delta))
    replicas = [Replica(i, keys, validator, sim, timing, scn.load.batch) for i in range(scn.n)]
    sim.nodes = replicas
    for b in scn.faults.byzantine:
        sim.adapters[b.replica] = ADAPTERS[b.mode](b.replica, scn.n, q.f, keys)

    metrics = Metrics(scn.delta)
    sim.observers.append(metrics.observe)
    checker = SafetyChecker(scn.n, keys, scn.byzantine) if check else None
    if checker is not None:
        sim.observers.append(checker.observe)
    sim.observers.extend(observers)
    sim.after_step.extend(after_step)

    for r in replicas:
        sim.call_at(0, r.start)
    counters = [0] * scn.n
    for t, lane, count in injection_schedule(scn):
        ids = [(lane << LANE_SHIFT) | (counters[lane] + j + 1) for j in range(count)]
        counters[lane] += count
        txs = [make_tx(i, scn.load.tx_size) for i in ids]
        sim.call_at(to_ticks(t), lambda r=replicas[lane], txs=txs: r.inject(txs))
    if setup is not None:
        setup(sim, replicas)

    violations: list[SafetyViolation] = []
    events = 0
    try:
        events = sim.run(to_ticks(scn.horizon))
        if checker is not None:
            checker.finish(replicas)
    except SafetyViolation as v:
        violations.append(v)
    return RunResult(scn, sim, replicas, metrics, checker, violations, events)


# -- derived measurements ---------------------------------------------------------------------------


@dataclass
class Hangover:
    backlog: float   # blip end -> last pre-blip tx finalized (units)
    excess: float    # first post-blip tx latency minus pre-blip median (units)
    steady: float | None
    recovered_at: float | None


def measure_hangover(metrics: Metrics, blip_start: float | None, blip_end: float | None, window: float = 5.0) -> Hangover:
    """Backlog and excess-latency hangover of one blip, in time units."""
    if blip_start is None or blip_end is None:
        return Hangover(0.0, 0.0, None, None)
    t0, t1 = to_ticks(blip_start), to_ticks(blip_end)
    pre = [i for i, t in metrics.inject.items() if t < t1 and not i & JUNK_BIT]
    if not pre:
        backlog = 0.0
    elif any(i not in metrics.final for i in pre):
        backlog = math.inf
    else:
        backlog = max(0.0, (max(metrics.final[i] for i in pre) - t1) / TICKS_PER_UNIT)
    steady_lats = [metrics.latency(i) for i, t in metrics.inject.items() if t < t0 and i in metrics.final]
    steady = statistics.median(steady_lats) if steady_lats else None
    post = sorted((t, i) for i, t in metrics.inject.items() if t >= t1)
    excess = 0.0
    recovered = None
    if post and steady is not None:
        first = metrics.latency(post[0][1])
        excess = math.inf if first is None else max(0.0, first - steady)
        # first window after the blip whose median latency is within 10% of steady state
        w = to_ticks(window)
        start = t1
        last = max(t for t, _ in post)
        while start <= last:
            lats = [metrics.latency(i) for t, i in post if start <= t < start + w]
            lats = [x for x in lats if x is not None]
            if lats and statistics.median(lats) <= 1.1 * steady:
                recovered = start / TICKS_PER_UNIT
                break
            start += w
    return Hangover(backlog, excess, steady, recovered)


@dataclass
class LivenessReport:
    ok: bool
    unfinalized: int
    worst_view: dict[int, int]
    detail: str = ""


def check_liveness(res: RunResult, correct_lanes: Iterable[int] | None = None, cutoff: float | None = None) -> LivenessReport:
    """Every tx injected at a correct replica (before ``cutoff``) is finalized by the horizon."""
    scn = res.scenario
    lanes = set(correct_lanes) if correct_lanes is not None else set(range(scn.n)) - scn.byzantine
    limit = to_ticks(cutoff) if cutoff is not None else math.inf
    missing = [i for i, t in res.metrics.inject.items() if tx_lane(i) in lanes and t <= limit and i not in res.metrics.final]
    detail = f"{len(missing)} transactions unfinalized" if missing else ""
    return LivenessReport(not missing and res.ok, len(missing), dict(sorted(res.metrics.commit_view.items())), detail)


# -- randomized scenario generators --------------------------------------------------------------


def random_faulty_scenario(n: int, seed: int, horizon: float = 30.0, mutations: list[str] | None = None) -> Scenario:
    """Seeded adversarial schedule: silences, partitions, equivocation, drops, short timers."""
    rng = random.Random(f"safety/{n}/{seed}")
    f = (n - 1) // 3
    jitter = rng.choice([0.0, 0.0, 0.5, 1.0])
    proto = ProtocolConfig(
        mode=rng.choice(["parallel", "sequential"]),
        k=rng.choice([1, 2, 4]),
        fast_path=rng.random() < 0.7,
        view_timer=rng.choice([2.0, 3.0, 4.0, 10.0]),
        leader_tips=rng.random() < 0.7,
        standalone_poa=rng.random() < 0.5,
        mutations=list(mutations or []),
    )
    faults = FaultSchedule()
    byz = rng.sample(range(n), rng.randint(0, f))
    for b in byz:
        faults.byzantine.append(ByzantineLane(b, rng.choice(BYZANTINE_MODES)))
    for _ in range(rng.randint(0, 2)):
        r = rng.randrange(n)
        a = rng.uniform(0, horizon * 0.6)
        faults.silences.append(
            SilentReplica(r, round(a, 3), round(min(horizon, a + rng.uniform(1, 10)), 3), rng.random() < 0.5, rng.choice(["all", "consensus"]))
        )
    if rng.random() < 0.5:
        ids = list(range(n))
        rng.shuffle(ids)
        cut = rng.randint(1, n - 1)
        a = rng.uniform(0, horizon * 0.6)
        faults.partitions.append(
            Partition((tuple(sorted(ids[:cut])), tuple(sorted(ids[cut:]))), round(a, 3), round(min(horizon, a + rng.uniform(2, 10)), 3))
        )
    if rng.random() < 0.3:
        faults.drops.append(DropRule(None, None, rng.choice([0.05, 0.2]), 0.0, horizon, ("commit", "confirm", "timeout", "prep_vote")))
    load = LoadSpec(rate=4.0, interval=0.5, batch=16, stop=horizon * 0.7)
    return Scenario(
        n=n,
        horizon=horizon,
        seed=seed,
        delay=DelayModel(1.0, None, jitter, None),
        faults=faults,
        load=load,
        protocol=proto,
        trace="none",
    )


def commit_drop_scenario(seed: int, mutations: list[str] | None = None) -> Scenario:
    """Commit certificates never spread, so every slot is recovered by view change."""
    rng = random.Random(f"commitdrop/{seed}")
    proto = ProtocolConfig(
        mode=rng.choice(["parallel", "sequential"]),
        fast_path=rng.random() < 0.5,
        view_timer=rng.choice([2.0, 3.0]),
        mutations=list(mutations or []),
    )
    faults = FaultSchedule(drops=[DropRule(None, None, 1.0, 0.0, math.inf, ("commit",))])
    return Scenario(
        n=4,
        horizon=25.0,
        seed=seed,
        delay=DelayModel(1.0, None, rng.choice([0.0, 0.5]), None),
        faults=faults,
        load=LoadSpec(rate=4.0, interval=0.5, batch=16, stop=20.0),
        protocol=proto,
        trace="none",
    )


def blip_scenario(blip: float, seed: int = 0, start: float = 20.0, tail: float = 30.0) -> tuple[Scenario, float, float]:
    """Consensus-only silence of one replica; its held messages flush when the blip ends."""
    horizon = start + blip + tail
    proto = ProtocolConfig(mode="parallel", view_timer=blip + 100.0)
    faults = FaultSchedule(silences=[SilentReplica(1, start, start + blip, True, "consensus")])
    scn = Scenario(
        n=4,
        horizon=horizon,
        seed=seed,
        faults=faults,
        load=LoadSpec(rate=10.0, interval=0.25, batch=100_000, stop=horizon - 15.0),
        protocol=ProtocolConfig(**{**asdict(proto), "batch_cap": 100_000}),
        trace="none",
    )
    return scn, start, start + blip


# -- verification suites ------------------------------------------------------------------------------


@dataclass
class SuiteReport:
    suite: str
    runs: int
    failures: list[dict]
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


def verify_safety(seeds: Iterable[int], sizes: Iterable[int] = (4, 7), mutations: list[str] | None = None) -> SuiteReport:
    failures = []
    runs = 0
    for n in sizes:
        for seed in seeds:
            scn = random_faulty_scenario(n, seed, mutations=mutations)
            res = run_scenario(scn)
            runs += 1
            if res.violations:
                failures.append({"n": n, "seed": seed, "violation": str(res.violations[0]), "scenario": scn.to_dict()})
    return SuiteReport("safety", runs, failures)


def verify_liveness(seeds: Iterable[int]) -> SuiteReport:
    failures = []
    runs = 0
    for seed in seeds:
        for name, scn, cutoff in _liveness_cases(seed):
            res = run_scenario(scn)
            runs += 1
            rep = check_liveness(res, cutoff=cutoff)
            if not rep.ok:
                failures.append({"case": name, "seed": seed, "detail": rep.detail or str(res.violations), "scenario": scn.to_dict()})
    return SuiteReport("liveness", runs, failures)


def _liveness_cases(seed: int):
    base = dict(n=4, horizon=60.0, seed=seed, load=LoadSpec(rate=4.0, interval=0.5, batch=8, stop=30.0), trace="none")
    yield "fault_free", Scenario(**base), 30.0
    yield "silent_leader", Scenario(
        **base, faults=FaultSchedule(silences=[SilentReplica(1, 0.0, math.inf)])
    ), 30.0
    yield "partition_heal", Scenario(
        **base, faults=FaultSchedule(partitions=[Partition(((0, 1), (2, 3)), 5.0, 15.0)])
    ), 30.0


def verify_seamless(blips: Iterable[float] = (2.0, 10.0, 50.0), bound_md: float = 7.0) -> SuiteReport:
    hang = {}
    for b in blips:
        scn, s, e = blip_scenario(b)
        res = run_scenario(scn)
        hang[b] = measure_hangover(res.metrics, s, e).backlog / scn.delta
    failures = []
    worst = max(hang.values())
    if worst > bound_md:
        failures.append({"detail": f"hangover {worst} md exceeds {bound_md}"})
    bl = sorted(hang)
    if hang[bl[-1]] > hang[bl[0]] + 1.0:
        failures.append({"detail": f"hangover grows with blip length: {hang}"})
    return SuiteReport("seamless", len(hang), failures, {"hangover_md": {str(k): v for k, v in hang.items()}})
