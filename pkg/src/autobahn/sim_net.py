"""Deterministic discrete-event network.

Time is an integer tick count, ``TICKS_PER_UNIT`` ticks per delay unit, so
no float ever decides event order.  Events sit in a heap keyed by
``(time, seq)`` with ``seq`` a global counter.  Randomness (jitter, drops) comes
from one ``random.Random(seed)`` consumed in event order.
"""
from __future__ import annotations

import heapq
import json
import math
import random
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import IO

from .consensus import (
    Commit,
    Confirm,
    ConfirmAck,
    Cut,
    Prepare,
    PrepVote,
    TimeoutMsg,
    TipReply,
    TipRequest,
    prepare_sign_digest,
)
from .core import KeyRing, ReplicaId, digest
from .data_lane import DataProposal, PoAMsg, TipRef, VoteMsg, make_tx, proposal_digest
from .ordering import NotServable, SyncReply, SyncRequest

TICKS_PER_UNIT = 1000

DATA_KINDS = frozenset(
    {"proposal", "vote", "poa", "sync_request", "sync_reply", "not_servable", "tip_request", "tip_reply"}
)
CONSENSUS_KINDS = frozenset({"prepare", "prep_vote", "confirm", "confirm_ack", "commit", "timeout"})
ALL_KINDS = DATA_KINDS | CONSENSUS_KINDS

_KIND_OF = {
    DataProposal: "proposal",
    VoteMsg: "vote",
    PoAMsg: "poa",
    SyncRequest: "sync_request",
    SyncReply: "sync_reply",
    NotServable: "not_servable",
    TipRequest: "tip_request",
    TipReply: "tip_reply",
    Prepare: "prepare",
    PrepVote: "prep_vote",
    Confirm: "confirm",
    ConfirmAck: "confirm_ack",
    Commit: "commit",
    TimeoutMsg: "timeout",
}


def kind_of(msg: object) -> str:
    return _KIND_OF[type(msg)]


def layer_of(kind: str) -> str:
    return "data" if kind in DATA_KINDS else "consensus"


def to_ticks(units: float) -> int:
    if math.isinf(units):
        return 2**62
    return int(round(units * TICKS_PER_UNIT))


def _kinds_match(sel: str | tuple[str, ...] | None, kind: str) -> bool:
    if sel is None or sel == "all":
        return True
    if sel == "data":
        return kind in DATA_KINDS
    if sel == "consensus":
        return kind in CONSENSUS_KINDS
    return kind in sel


# -- configuration -------------------------------------------------------------------


@dataclass
class DelayModel:
    """Per-link delay in units: ``matrix[src][dst]`` or ``base``, plus uniform jitter."""

    base: float = 1.0
    matrix: list[list[float]] | None = None
    jitter: float = 0.0
    delta: float | None = None

    def link(self, src: int, dst: int) -> float:
        return self.matrix[src][dst] if self.matrix is not None else self.base

    @property
    def bound(self) -> float:
        """Declared Δ; defaults to the largest possible link delay."""
        if self.delta is not None:
            return self.delta
        worst = max(max(r) for r in self.matrix) if self.matrix is not None else self.base
        return worst + self.jitter

    def sample(self, src: int, dst: int, rng: random.Random) -> int:
        t = to_ticks(self.link(src, dst))
        if self.jitter > 0:
            t += rng.randint(0, to_ticks(self.jitter))
        return t


@dataclass(frozen=True)
class Partition:
    groups: tuple[tuple[int, ...], ...]
    start: float
    end: float

    def separates(self, a: int, b: int) -> bool:
        for g in self.groups:
            if a in g:
                return b not in g
        return True


@dataclass(frozen=True)
class SilentReplica:
    replica: int
    start: float
    end: float = math.inf
    release: bool = False
    kinds: str | tuple[str, ...] = "all"


@dataclass(frozen=True)
class ByzantineLane:
    replica: int
    mode: str  # equivocate | withhold_data | leader_tip_abuse


@dataclass(frozen=True)
class DropRule:
    src: int | None
    dst: int | None
    probability: float
    start: float = 0.0
    end: float = math.inf
    kinds: str | tuple[str, ...] | None = None


BYZANTINE_MODES = ("equivocate", "withhold_data", "leader_tip_abuse")


@dataclass
class FaultSchedule:
    partitions: list[Partition] = field(default_factory=list)
    silences: list[SilentReplica] = field(default_factory=list)
    byzantine: list[ByzantineLane] = field(default_factory=list)
    drops: list[DropRule] = field(default_factory=list)

    def validate(self, n: int, f: int) -> None:
        if len({b.replica for b in self.byzantine}) > f:
            raise ValueError(f"at most f={f} replicas may be Byzantine")
        for b in self.byzantine:
            if b.mode not in BYZANTINE_MODES:
                raise ValueError(f"unknown Byzantine mode {b.mode!r}")
        ids = [b.replica for b in self.byzantine] + [s.replica for s in self.silences]
        ids += [r for p in self.partitions for g in p.groups for r in g]
        ids += [r for d in self.drops for r in (d.src, d.dst) if r is not None]
        for r in ids:
            if not 0 <= r < n:
                raise ValueError(f"replica {r} does not exist (n={n})")
        for p in self.partitions:
            flat = [r for g in p.groups for r in g]
            if len(flat) != len(set(flat)):
                raise ValueError("partition groups overlap")
            if p.end <= p.start:
                raise ValueError("partition must end after it starts")


# -- tracing --------------------------------------------------------------------------


class Trace:
    """Ordered record of what happened, exportable as NDJSON.

    ``level="full"`` also records every send/deliver/drop; ``"events"`` keeps
    only replica-emitted events.  Fields whose names start with ``_`` are for
    in-process observers and never reach the trace.
    """

    def __init__(self, level: str = "events"):
        if level not in ("full", "events", "none"):
            raise ValueError(f"unknown trace level {level!r}")
        self.level = level
        self.records: list[tuple] = []

    def add(self, time: int, replica: int, kind: str, fields: dict) -> None:
        if self.level == "none":
            return
        self.records.append((time, replica, kind, {k: v for k, v in fields.items() if not k.startswith("_")}))

    def net(self, time: int, what: str, src: int, dst: int, kind: str, at: int | None = None) -> None:
        if self.level == "full":
            f = {"src": src, "dst": dst, "msg": kind}
            if at is not None:
                f["at"] = at
            self.records.append((time, -1, what, f))

    def lines(self):
        for t, r, kind, f in self.records:
            yield json.dumps({"t": t, "r": r, "ev": kind, **f}, sort_keys=True, separators=(",", ":"))

    def dump(self, fp: IO[str]) -> None:
        for line in self.lines():
            fp.write(line + "\n")

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines())


# -- Byzantine adapters ----------------------------------------------------------------


class Adapter:
    """Rewrites a Byzantine replica's own outbound messages; never signs for others."""

    def __init__(self, me: ReplicaId, n: int, f: int, keys: KeyRing):
        self.me, self.n, self.f, self.keys = me, n, f, keys

    def outbound(self, dst: ReplicaId, msg: object) -> list[object]:
        return [msg]


JUNK_BIT = 1 << 63


class Equivocate(Adapter):
    """Odd-numbered peers get a conflicting twin of each car, and both versions of each Prepare."""

    def __init__(self, *a):
        super().__init__(*a)
        self._twins: dict[bytes, object] = {}

    def _twin_car(self, p: DataProposal) -> DataProposal:
        batch = tuple(make_tx(JUNK_BIT | (self.me << 40) | (p.pos << 16) | i, len(p.batch[i])) for i in range(len(p.batch)))
        if batch == p.batch:
            batch = batch + (make_tx(JUNK_BIT | (self.me << 40) | (p.pos << 16) | 0xFFFF),)
        dig = proposal_digest(p.lane, p.pos, batch, p.parent)
        return DataProposal(p.lane, p.pos, batch, p.parent, p.parent_cert, self.keys.sign(self.me, dig), dig)

    def _twin_prepare(self, p: Prepare) -> Prepare | None:
        tips = list(p.cut.tips)
        if tips[self.me].pos == 0:
            return None
        tips[self.me] = TipRef.genesis(self.me)
        cut = Cut(p.slot, p.view, tuple(tips))
        return Prepare(cut, p.ticket, self.keys.sign(self.me, prepare_sign_digest(cut)))

    def outbound(self, dst, msg):
        if dst == self.me or dst % 2 == 0:
            return [msg]
        if isinstance(msg, DataProposal) and msg.lane == self.me:
            twin = self._twins.get(msg.digest)
            if twin is None:
                twin = self._twins[msg.digest] = self._twin_car(msg)
            return [twin]
        if isinstance(msg, Prepare) and msg.leader == self.me and msg.view == 0:
            key = msg.cut.digest
            if key not in self._twins:
                self._twins[key] = self._twin_prepare(msg)
            twin = self._twins[key]
            return [msg, twin] if twin is not None else [msg]
        return [msg]


class WithholdData(Adapter):
    """Own proposals reach only the f lowest-id peers, enough for a PoA."""

    def outbound(self, dst, msg):
        if isinstance(msg, DataProposal) and msg.lane == self.me and dst != self.me:
            peers = [r for r in range(self.n) if r != self.me][: self.f]
            return [msg] if dst in peers else []
        return [msg]


class LeaderTipAbuse(Adapter):
    """View-0 Prepares reference an own-lane tip that was never broadcast."""

    def __init__(self, *a):
        super().__init__(*a)
        self._fakes: dict[bytes, Prepare] = {}

    def outbound(self, dst, msg):
        if dst == self.me or not isinstance(msg, Prepare) or msg.leader != self.me or msg.view != 0:
            return [msg]
        fake = self._fakes.get(msg.cut.digest)
        if fake is None:
            tips = list(msg.cut.tips)
            t = tips[self.me]
            tips[self.me] = TipRef(self.me, t.pos + 5, digest(b"phantom" + t.dig), None)
            cut = Cut(msg.slot, msg.view, tuple(tips))
            fake = self._fakes[msg.cut.digest] = Prepare(cut, msg.ticket, self.keys.sign(self.me, prepare_sign_digest(cut)))
        return [fake]


ADAPTERS = {"equivocate": Equivocate, "withhold_data": WithholdData, "leader_tip_abuse": LeaderTipAbuse}


# -- simulator ---------------------------------------------------------------------------

_DELIVER, _TIMER, _CALL = 0, 1, 2


class Simulator:
    def __init__(
        self,
        n: int,
        delay: DelayModel | None = None,
        faults: FaultSchedule | None = None,
        seed: int = 0,
        trace: Trace | None = None,
    ):
        self.n = n
        self.delay = delay or DelayModel()
        self.faults = faults or FaultSchedule()
        self.rng = random.Random(seed)
        self.trace = trace or Trace("events")
        self.now = 0
        self._queue: list[tuple] = []
        self._seq = 0
        self._timers: dict[tuple, int] = {}
        self.nodes: list = []
        self.adapters: dict[int, Adapter] = {}
        self.observers: list[Callable[[int, int, str, dict], None]] = []
        self.after_step: list[Callable[[int], None]] = []
        self.delivered = 0
        self._last = (0, -1)
        self._parts = [(to_ticks(p.start), to_ticks(p.end), p) for p in self.faults.partitions]
        self._silent = [(to_ticks(s.start), to_ticks(s.end), s) for s in self.faults.silences]
        self._drops = [(to_ticks(d.start), to_ticks(d.end), d) for d in self.faults.drops]

    # scheduling --------------------------------------------------------------------
    def _push(self, time: int, kind: int, payload: tuple) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (time, self._seq, kind, payload))

    def call_at(self, units_or_ticks: int, fn: Callable[[], None]) -> None:
        self._push(units_or_ticks, _CALL, (fn,))

    def set_timer(self, replica: int, tid: tuple, ticks: int) -> None:
        """Arm (or re-arm) a timer; the latest arming of ``(replica, tid)`` wins."""
        token = self._seq + 1
        self._timers[(replica, tid)] = token
        self._push(self.now + max(0, ticks), _TIMER, (replica, tid, token))

    def cancel_timer(self, replica: int, tid: tuple) -> None:
        self._timers.pop((replica, tid), None)

    def emit(self, replica: int, kind: str, fields: dict) -> None:
        self.trace.add(self.now, replica, kind, fields)
        for ob in self.observers:
            ob(self.now, replica, kind, fields)

    # network ----------------------------------------------------------------------------
    def send(self, src: int, dst: int, msg: object) -> None:
        ad = self.adapters.get(src)
        if ad is not None and dst != src:
            for m in ad.outbound(dst, msg):
                self._transmit(src, dst, m)
        else:
            self._transmit(src, dst, msg)

    def _transmit(self, src: int, dst: int, msg: object) -> None:
        kind = kind_of(msg)
        t = self.now
        if src == dst:
            self._push(t, _DELIVER, (dst, src, msg))
            return
        for s0, s1, s in self._silent:
            if s.replica == src and s0 <= t < s1 and _kinds_match(s.kinds, kind):
                if not s.release:
                    self.trace.net(t, "drop", src, dst, kind)
                    return
                t = s1
        for d0, d1, d in self._drops:
            if d0 <= t < d1 and (d.src is None or d.src == src) and (d.dst is None or d.dst == dst):
                if _kinds_match(d.kinds, kind) and self.rng.random() < d.probability:
                    self.trace.net(t, "drop", src, dst, kind)
                    return
        lat = self.delay.sample(src, dst, self.rng)
        at = t + lat
        for p0, p1, p in self._parts:
            if p0 <= t < p1 and p.separates(src, dst):
                at = max(at, p1 + lat)
        self.trace.net(self.now, "send", src, dst, kind, at)
        self._push(at, _DELIVER, (dst, src, msg))

    # loop ----------------------------------------------------------------------------------
    def run(self, until: int) -> int:
        """Process events with time <= ``until``; returns the number processed."""
        q = self._queue
        count = 0
        while q and q[0][0] <= until:
            t, seq, kind, payload = heapq.heappop(q)
            assert (t, seq) > self._last, "event order violated"
            self._last = (t, seq)
            self.now = t
            count += 1
            if kind == _DELIVER:
                dst, src, msg = payload
                self.delivered += 1
                if self.trace.level == "full":
                    self.trace.net(t, "deliver", src, dst, kind_of(msg))
                self.nodes[dst].on_message(src, msg)
                who = dst
            elif kind == _TIMER:
                rid, tid, token = payload
                if self._timers.get((rid, tid)) != token:
                    continue
                del self._timers[(rid, tid)]
                self.nodes[rid].on_timer(tid)
                who = rid
            else:
                payload[0]()
                who = -1
            for hook in self.after_step:
                hook(who)
        self.now = max(self.now, until) if not q else self.now
        return count

    @property
    def idle(self) -> bool:
        return not self._queue
