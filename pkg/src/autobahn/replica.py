"""One replica: data lanes, slot instances and ordering behind a single inbox.

The replica talks to the outside world through a small network interface
(``send``, ``set_timer``, ``cancel_timer``, ``emit``); the simulator provides it.
All handlers run to completion on the simulator thread.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Protocol

from .config import ProtocolConfig
from .consensus import (
    ArmFast,
    Commit,
    CommitQC,
    CommitTicket,
    Confirm,
    ConfirmAck,
    Cut,
    Deferred,
    FormedTC,
    ForwardCommit,
    JoinMutiny,
    ParallelTicket,
    Prepare,
    PrepareQC,
    PrepVote,
    SlotInstance,
    TCTicket,
    TimeoutCertificate,
    TimeoutMsg,
    TipReply,
    TipRequest,
    Validator,
    genesis_commit_qc,
    genesis_cut,
)
from .core import KeyRing, ReplicaId
from .data_lane import DataProposal, LaneState, PoAMsg, TipRef, Voted, VoteMsg, tx_id
from .ordering import (
    LastCommitMap,
    Log,
    NotServable,
    PendingCommit,
    SyncReply,
    SyncRequest,
    check_sync_reply,
    finalize_slot,
    garbage_collect,
    handle_sync_request,
    local_chain,
    on_commit,
    sync_need,
    sync_targets,
)


class Network(Protocol):
    now: int

    def send(self, src: ReplicaId, dst: ReplicaId, msg: object) -> None: ...
    def set_timer(self, replica: ReplicaId, tid: tuple, ticks: int) -> None: ...
    def cancel_timer(self, replica: ReplicaId, tid: tuple) -> None: ...
    def emit(self, replica: ReplicaId, kind: str, fields: dict) -> None: ...


@dataclass
class SyncJob:
    req: SyncRequest
    targets: list[ReplicaId]
    idx: int = 0
    probes: int = 0


@dataclass(frozen=True)
class Timing:
    """Protocol durations already converted to simulator ticks."""

    view_timer: int
    fast_wait: int
    sync_timeout: int

    @staticmethod
    def from_config(cfg: ProtocolConfig, delta_ticks: int) -> "Timing":
        vt = cfg.view_timer if cfg.view_timer is not None else 10.0
        st = cfg.sync_timeout if cfg.sync_timeout is not None else 2.0
        return Timing(
            view_timer=max(1, round(vt * delta_ticks)),
            fast_wait=max(0, round(cfg.fast_wait * delta_ticks)),
            sync_timeout=max(1, round(st * delta_ticks)) + 1,  # a reply landing exactly at 2Δ is in time
        )


class Replica:
    def __init__(
        self,
        me: ReplicaId,
        keys: KeyRing,
        validator: Validator,
        net: Network,
        timing: Timing,
        batch_size: int = 1000,
    ):
        self.me = me
        self.keys = keys
        self.val = validator
        self.q = validator.q
        self.n = self.q.n
        self.cfg: ProtocolConfig = validator.cfg
        self.net = net
        self.timing = timing
        self.batch_size = min(batch_size, self.cfg.batch_cap)

        self.lanes = [
            LaneState(l, me, self.q, keys, self.cfg.batch_cap, self.cfg.buffer_cap) for l in range(self.n)
        ]
        self.queue: deque[bytes] = deque()

        self.slots: dict[int, SlotInstance] = {}
        self.commits: dict[int, CommitQC] = {0: genesis_commit_qc(self.n)}
        self.committed: set[int] = set()
        self.first_prepare: dict[int, Prepare] = {}
        self.ticketed: set[int] = set()
        self.leader_wait: dict[int, tuple[int, object]] = {}
        self.tip_asked: set[tuple[int, bytes]] = set()
        self.deferred_slots: set[int] = set()
        self._poa_sent: bytes | None = None

        self.last_commit = LastCommitMap(self.n)
        self.log = Log()
        self.finalized = 0
        self.pending: dict[int, PendingCommit] = {}
        self.sync_jobs: dict[tuple[int, bytes], SyncJob] = {}
        self._genesis_cut = genesis_cut(self.n)

    # -- plumbing -----------------------------------------------------------------
    def emit(self, event: str, /, **fields) -> None:
        self.net.emit(self.me, event, fields)

    def send(self, dst: ReplicaId, msg: object) -> None:
        self.net.send(self.me, dst, msg)

    def broadcast(self, msg: object, include_self: bool = True) -> None:
        for dst in range(self.n):
            if include_self or dst != self.me:
                self.net.send(self.me, dst, msg)

    def start(self) -> None:
        self._check_ticket(1)

    def slot(self, s: int) -> SlotInstance:
        inst = self.slots.get(s)
        if inst is None:
            inst = self.slots[s] = SlotInstance(s, self.me, self.val)
        return inst

    # -- inbox ----------------------------------------------------------------------
    def on_message(self, src: ReplicaId, msg: object) -> None:
        h = self._handlers.get(type(msg))
        if h is None:
            raise TypeError(f"unexpected message {type(msg).__name__}")
        h(self, src, msg)

    def on_timer(self, tid: tuple) -> None:
        kind = tid[0]
        if kind == "view":
            s = tid[1]
            inst = self.slots.get(s)
            if inst is None or inst.timer_view is None:
                return
            tm = inst.on_timer_expiry(inst.timer_view)
            if tm is not None:
                self.emit("timeout", slot=s, view=tm.view, join=False)
                self.broadcast(tm)
        elif kind == "fast":
            _, s, v = tid
            inst = self.slots.get(s)
            if inst is None:
                return
            qc = inst.fast_timer_expired(v)
            if qc is not None:
                self._on_prepare_qc(qc)
        elif kind == "sync":
            job = self.sync_jobs.get((tid[1], tid[2]))
            if job is not None:
                self._probe(job)

    def inject(self, txs: list[bytes]) -> None:
        self.queue.extend(txs)
        self.emit("inject", count=len(txs), _ids=[tx_id(t) for t in txs])
        self._maybe_car()

    # -- data layer -------------------------------------------------------------------
    def _maybe_car(self) -> None:
        lane = self.lanes[self.me]
        if not lane.can_propose:
            return
        if not self.queue:
            if self.cfg.standalone_poa and lane.best_poa is not None and lane.outstanding is None:
                poa = lane.best_poa
                if self._poa_sent != poa.dig:
                    self._poa_sent = poa.dig
                    self.broadcast(PoAMsg(poa), include_self=False)
            return
        batch = [self.queue.popleft() for _ in range(min(self.batch_size, len(self.queue)))]
        prop = lane.create_proposal(batch)
        self.emit("car", lane=self.me, pos=prop.pos, dig=prop.digest.hex(), txs=len(batch))
        self.broadcast(prop)
        if self.cfg.leader_tips:
            self._retry_leader()

    def _on_proposal(self, src: ReplicaId, prop: DataProposal) -> None:
        lane = self.lanes[prop.lane]
        before = lane.max_cert_pos
        res = lane.handle_proposal(prop)
        if isinstance(res, Voted):
            self._send_vote(res.vote)
            for v in lane.replay_buffered():
                self._send_vote(v)
        if lane.max_cert_pos != before:
            self._tips_changed()
        self._data_arrived()

    def _send_vote(self, vote: VoteMsg) -> None:
        self.emit("data_vote", lane=vote.lane, pos=vote.pos, dig=vote.dig.hex())
        self.send(vote.lane, vote)

    def _on_vote(self, src: ReplicaId, vote: VoteMsg) -> None:
        poa = self.lanes[self.me].handle_vote(vote)
        if poa is None:
            return
        self.emit("poa", lane=poa.lane, pos=poa.pos, dig=poa.dig.hex(), signers=poa.signers(), _poa=poa)
        self._maybe_car()
        self._tips_changed()

    def _on_poa(self, src: ReplicaId, msg: PoAMsg) -> None:
        if self.lanes[msg.poa.lane].learn_poa(msg.poa):
            self._tips_changed()

    def _on_tip_request(self, src: ReplicaId, req: TipRequest) -> None:
        p = self.lanes[req.lane].get(req.dig)
        if p is not None:
            self.send(src, TipReply(p))

    def _on_tip_reply(self, src: ReplicaId, rep: TipReply) -> None:
        if self.lanes[rep.proposal.lane].store(rep.proposal):
            self._data_arrived()

    def _tips_changed(self) -> None:
        if self.leader_wait:
            self._retry_leader()

    def _data_arrived(self) -> None:
        for s in sorted(self.deferred_slots):
            inst = self.slots[s]
            for v in sorted(inst.deferred):
                if v != inst.current_view or inst.committed:
                    del inst.deferred[v]
                else:
                    self._vote_prepare(inst, inst.deferred[v])
            if not inst.deferred:
                self.deferred_slots.discard(s)
        if self.pending:
            self._try_finalize()

    # -- consensus: tickets and proposing ---------------------------------------------
    def _ticket(self, s: int):
        if self.cfg.mode == "sequential":
            qc = self.commits.get(s - 1)
            return CommitTicket(qc) if qc is not None else None
        prev = None
        if s > 1:
            prev = self.first_prepare.get(s - 1)
            if prev is None:
                return None
        qc = self.commits.get(max(0, s - self.cfg.k))
        if qc is None:
            return None
        return ParallelTicket(prev, qc)

    def _reference(self, s: int, ticket) -> tuple[TipRef, ...]:
        if isinstance(ticket, CommitTicket):
            return ticket.qc.cut.tips
        if isinstance(ticket, ParallelTicket) and ticket.prev_prepare is not None:
            return ticket.prev_prepare.cut.tips
        return self._genesis_cut.tips

    def _check_ticket(self, s: int) -> None:
        if s < 1 or s in self.ticketed or s in self.committed:
            return
        ticket = self._ticket(s)
        if ticket is None:
            return
        self._arm(s)
        if self.val.leader(s, 0) == self.me and self.slot(s).current_view == 0:
            self.leader_wait[s] = (0, ticket)
            self._retry_leader()

    def _arm(self, s: int) -> None:
        """Start the view timer of ``s`` and of any lower slot still lacking one."""
        if s in self.ticketed or s in self.committed:
            return
        lo = max(self.finalized + 1, s - 64)
        for x in range(lo, s + 1):
            if x in self.ticketed or x in self.committed:
                continue
            self.ticketed.add(x)
            inst = self.slot(x)
            inst.timer_view = inst.current_view
            self.net.set_timer(self.me, ("view", x), self.timing.view_timer)

    def _local_tips(self, view: int) -> tuple[TipRef, ...]:
        out = []
        for l, lane in enumerate(self.lanes):
            if view == 0 and (self.cfg.optimistic_tips or (self.cfg.leader_tips and l == self.me)):
                out.append(lane.optimistic_tip())
            else:
                out.append(lane.certified_tip())
        return tuple(out)

    def _retry_leader(self) -> None:
        for s in sorted(self.leader_wait):
            v, ticket = self.leader_wait[s]
            inst = self.slot(s)
            if inst.committed or v < inst.current_view:
                del self.leader_wait[s]
                continue
            ref = self._reference(s, ticket) if v == 0 else None
            thr = self.cfg.coverage if self.cfg.coverage is not None else self.q.consensus_quorum
            prep = inst.try_propose(v, ticket, self._local_tips(v), ref, thr)
            if prep is None:
                continue
            del self.leader_wait[s]
            self.emit("propose", slot=s, view=v, dig=prep.cut.digest.hex(), tips=list(prep.cut.positions()), _prep=prep)
            self.broadcast(prep)

    # -- consensus: replica side ----------------------------------------------------------
    def _learn_prepare(self, p: Prepare) -> None:
        s = p.slot
        if s not in self.first_prepare:
            self.first_prepare[s] = p.stripped()
            self._check_ticket(s + 1)
        t = p.ticket
        if isinstance(t, ParallelTicket):
            if t.prev_prepare is not None and t.prev_prepare.slot not in self.first_prepare:
                self.first_prepare[t.prev_prepare.slot] = t.prev_prepare
                self._check_ticket(t.prev_prepare.slot + 1)
            self._observe_commit(t.qc)
        elif isinstance(t, CommitTicket):
            self._observe_commit(t.qc)

    def _on_prepare(self, src: ReplicaId, p: Prepare) -> None:
        if not self.val.prepare_sig(p) or not self.val.ticket(p):
            self.emit("reject", what="prepare", slot=p.slot, view=p.view, reason="invalid")
            return
        self._learn_prepare(p)
        s, v = p.slot, p.view
        inst = self.slot(s)
        if inst.committed:
            return
        if v > inst.current_view:
            assert isinstance(p.ticket, TCTicket)
            self._enter_view(s, v, p.ticket.tc)
        self._arm(s)
        self._vote_prepare(inst, p)

    def _vote_prepare(self, inst: SlotInstance, p: Prepare) -> None:
        res = inst.handle_prepare(p, self._have)
        if isinstance(res, PrepVote):
            self.emit("prep_vote", slot=p.slot, view=p.view, dig=res.dig.hex(), value=p.cut.value.hex())
            self.send(p.leader, res)
            self._sync_cut(p.cut)
        elif isinstance(res, Deferred):
            self.deferred_slots.add(p.slot)
            for t in res.missing:
                key = (t.lane, t.dig)
                if key not in self.tip_asked:
                    self.tip_asked.add(key)
                    self.send(p.leader, TipRequest(t.lane, t.pos, t.dig))

    def _have(self, t: TipRef) -> bool:
        return self.lanes[t.lane].has(t.dig) or t.dig in self.log.by_dig

    def _on_prep_vote(self, src: ReplicaId, vote: PrepVote) -> None:
        inst = self.slots.get(vote.slot)
        if inst is None:
            return
        res = inst.collect_prep_vote(vote)
        if isinstance(res, ArmFast):
            self.net.set_timer(self.me, ("fast", vote.slot, vote.view), self.timing.fast_wait)
        elif isinstance(res, PrepareQC):
            self._on_prepare_qc(res)
        elif isinstance(res, CommitQC):
            self.emit("qc", slot=res.slot, view=res.view, kind="fast", dig=res.dig.hex())
            self._observe_commit(res)
            self.broadcast(Commit(res), include_self=False)

    def _on_prepare_qc(self, qc: PrepareQC) -> None:
        self.emit("qc", slot=qc.slot, view=qc.view, kind="prepare", dig=qc.dig.hex())
        self.broadcast(Confirm(qc))

    def _on_confirm(self, src: ReplicaId, c: Confirm) -> None:
        qc = c.qc
        if not self.val.prepare_qc(qc):
            return
        inst = self.slot(qc.slot)
        ack = inst.handle_confirm(qc, src)
        if ack is not None:
            self.emit("confirm_ack", slot=qc.slot, view=qc.view, dig=qc.dig.hex())
            self.send(self.val.leader(qc.slot, qc.view), ack)

    def _on_confirm_ack(self, src: ReplicaId, ack: ConfirmAck) -> None:
        inst = self.slots.get(ack.slot)
        if inst is None:
            return
        qc = inst.collect_confirm_ack(ack)
        if qc is not None:
            self.emit("qc", slot=qc.slot, view=qc.view, kind="slow", dig=qc.dig.hex())
            self._observe_commit(qc)
            self.broadcast(Commit(qc), include_self=False)

    def _on_commit(self, src: ReplicaId, c: Commit) -> None:
        if c.qc.slot not in self.committed and self.val.commit_qc(c.qc):
            self._observe_commit(c.qc)

    def _on_timeout(self, src: ReplicaId, tm: TimeoutMsg) -> None:
        s = tm.slot
        if s < 1:
            return
        if s in self.committed:
            qc = self.commits.get(s) or self.slot(s).commit
            if qc is not None and src != self.me:
                self.send(src, Commit(qc))
            return
        inst = self.slot(s)
        for r in inst.handle_timeout(tm, src):
            if isinstance(r, JoinMutiny):
                self.emit("timeout", slot=s, view=r.timeout.view, join=True)
                self.broadcast(r.timeout)
            elif isinstance(r, FormedTC):
                self.emit("tc", slot=s, view=r.tc.view)
                self._enter_view(s, r.tc.view + 1, r.tc)
            elif isinstance(r, ForwardCommit):
                self.send(r.to, Commit(r.qc))

    def _enter_view(self, s: int, v: int, tc: TimeoutCertificate) -> None:
        inst = self.slot(s)
        if v <= inst.current_view or inst.committed:
            return
        ready = inst.advance_to(v)
        self.ticketed.add(s)
        inst.timer_view = v
        self.net.set_timer(self.me, ("view", s), self.timing.view_timer)
        self.emit("view", slot=s, view=v)
        if self.val.leader(s, v) == self.me:
            self.leader_wait[s] = (v, TCTicket(tc))
            self._retry_leader()
        elif s in self.leader_wait and self.leader_wait[s][0] < v:
            del self.leader_wait[s]
        for sender, msg in ready:
            self.on_message(sender, msg)

    # -- commit, sync and finalization -----------------------------------------------------
    def _observe_commit(self, qc: CommitQC) -> None:
        s = qc.slot
        if s == 0 or s in self.committed:
            return
        inst = self.slot(s)
        if inst.commit is None:
            inst.commit = qc
        self.committed.add(s)
        self.commits[s] = qc
        self.net.cancel_timer(self.me, ("view", s))
        self.leader_wait.pop(s, None)
        self.emit("commit", slot=s, view=qc.view, kind=qc.kind, value=qc.cut.value.hex(), tips=list(qc.cut.positions()))
        if s > self.finalized:
            pend = on_commit(s, qc.cut, self.lanes, self.log, self.last_commit)
            self.pending[s] = pend
            for lane, req in sorted(pend.missing.items()):
                self._start_sync(qc.cut.tips[lane], req)
        if self.cfg.mode == "sequential":
            self._check_ticket(s + 1)
        else:
            self._check_ticket(s + self.cfg.k)
        self._try_finalize()

    def _sync_cut(self, cut: Cut) -> None:
        for tip in cut.tips:
            if tip.cert is None:
                continue
            req = sync_need(tip, self.lanes[tip.lane], self.log, self.last_commit[tip.lane])
            if req is not None:
                self._start_sync(tip, req)

    def _start_sync(self, tip: TipRef, req: SyncRequest) -> None:
        key = (req.lane, req.tip_dig)
        if key in self.sync_jobs:
            return
        job = SyncJob(req, sync_targets(tip, self.me, self.n))
        self.sync_jobs[key] = job
        self._probe(job)

    def _probe(self, job: SyncJob) -> None:
        if not job.targets:
            return
        target = job.targets[job.idx % len(job.targets)]
        job.idx += 1
        job.probes += 1
        r = job.req
        self.emit("sync_probe", lane=r.lane, target=target, lo=r.from_pos, hi=r.to_pos)
        self.send(target, r)
        self.net.set_timer(self.me, ("sync", r.lane, r.tip_dig), self.timing.sync_timeout)

    def _finish_job(self, key: tuple[int, bytes]) -> None:
        if self.sync_jobs.pop(key, None) is not None:
            self.net.cancel_timer(self.me, ("sync", key[0], key[1]))

    def _on_sync_request(self, src: ReplicaId, req: SyncRequest) -> None:
        self.send(src, handle_sync_request(req, self.lanes[req.lane], self.log))

    def _on_not_servable(self, src: ReplicaId, ns: NotServable) -> None:
        job = self.sync_jobs.get((ns.lane, ns.tip_dig))
        if job is not None:
            self.emit("not_servable", lane=ns.lane, source=src)
            self._probe(job)

    def _on_sync_reply(self, src: ReplicaId, rep: SyncReply) -> None:
        key = (rep.lane, rep.tip_dig)
        job = self.sync_jobs.get(key)
        if job is None:
            return
        reason = check_sync_reply(job.req, rep, self.keys)
        if reason is not None:
            self.emit("sync_reject", lane=rep.lane, source=src, reason=reason)
            self._probe(job)
            return
        self.emit("sync_ok", lane=rep.lane, source=src, length=len(rep.chain), probes=job.probes)
        self._finish_job(key)
        lane = self.lanes[rep.lane]
        before = lane.max_cert_pos
        if lane.adopt_chain(list(rep.chain), self.last_commit[rep.lane]):
            self.emit("adopt", lane=rep.lane, upto=lane.voted)
            for v in lane.replay_buffered():
                self._send_vote(v)
        if lane.max_cert_pos != before:
            self._tips_changed()
        self._data_arrived()

    def _refresh(self, pend: PendingCommit) -> None:
        for lane in list(pend.missing):
            tip = pend.cut.tips[lane]
            lc = self.last_commit[lane]
            if tip.pos <= lc or local_chain(self.lanes[lane], self.log, tip, lc) is not None:
                req = pend.missing.pop(lane)
                self._finish_job((req.lane, req.tip_dig))

    def _try_finalize(self) -> None:
        while True:
            s = self.finalized + 1
            pend = self.pending.get(s)
            if pend is None:
                return
            self._refresh(pend)
            if not pend.ready:
                return
            start = len(self.log)
            entries = finalize_slot(pend, self.lanes, self.last_commit, self.log)
            del self.pending[s]
            self.finalized = s
            self.emit(
                "finalize",
                slot=s,
                start=start,
                entries=[[e.lane, e.pos, e.dig.hex()] for e in entries],
                _txs=[tx_id(t) for e in entries for t in e.proposal.batch],
            )
            self._catch_up_lanes()
            garbage_collect(self.commits, self.lanes, self.last_commit, s, self.cfg.k)
            self._check_ticket(s + 1)

    def _catch_up_lanes(self) -> None:
        """Move vote marks past committed history this replica never voted on."""
        for lane in self.lanes:
            lc = self.last_commit[lane.lane]
            if lane.voted >= lc:
                continue
            e = self.log.by_pos.get((lane.lane, lc))
            if e is None:
                continue
            lane.chain[lc] = e.dig
            lane.voted = lc
            if lane.lane == self.me:
                lane.proposed = max(lane.proposed, lc)
            self.emit("adopt", lane=lane.lane, upto=lc)
            for v in lane.replay_buffered():
                self._send_vote(v)

    _handlers = {
        DataProposal: _on_proposal,
        VoteMsg: _on_vote,
        PoAMsg: _on_poa,
        TipRequest: _on_tip_request,
        TipReply: _on_tip_reply,
        Prepare: _on_prepare,
        PrepVote: _on_prep_vote,
        Confirm: _on_confirm,
        ConfirmAck: _on_confirm_ack,
        Commit: _on_commit,
        TimeoutMsg: _on_timeout,
        SyncRequest: _on_sync_request,
        SyncReply: _on_sync_reply,
        NotServable: _on_not_servable,
    }
