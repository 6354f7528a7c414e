"""Slot/view agreement on cuts: Prepare, Confirm, fast path, view change.

Signed payloads (all 32-byte digests):

* Cut: ``"CUT" | u64 slot | u64 view | seq(TipRef)``; the view-free value
  digest ``"CUTV" | u64 slot | seq(TipRef)`` identifies the agreed value.
* Prepare signs ``domain("PREPARE", cut.digest)``; Prep-Vote signs
  ``domain("PREPVOTE", cut.digest, slot, view)``; Confirm-Ack signs
  ``domain("CONFACK", cut.digest, slot, view)``.
* Timeout signs ``"TIMEOUT" | u64 slot | u64 view | opt(highQC cut digest)
  | opt(highProp cut digest)``.

Embedded Prepares (parallel tickets, ``highProp``) travel stripped of their
own ticket so certificates never nest more than one level.
"""
from __future__ import annotations

from collections.abc import Callable, Iterable
from dataclasses import dataclass, field

from .config import ProtocolConfig
from .core import (
    GENESIS_DIGEST,
    Authenticator,
    Digest,
    KeyRing,
    QuorumConfig,
    ReplicaId,
    Writer,
    digest,
    domain,
)
from .data_lane import DataProposal, Rejected, TipRef


@dataclass(frozen=True, slots=True)
class Cut:
    slot: int
    view: int
    tips: tuple[TipRef, ...]
    digest: Digest = field(default=b"", compare=False, repr=False)
    value: Digest = field(default=b"", compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.digest:
            tips = [t.encode() for t in self.tips]
            object.__setattr__(
                self, "digest", digest(Writer(b"CUT").u64(self.slot).u64(self.view).seq(tips).getvalue())
            )
            object.__setattr__(self, "value", digest(Writer(b"CUTV").u64(self.slot).seq(tips).getvalue()))

    def encode(self) -> bytes:
        return Writer(b"CUT").u64(self.slot).u64(self.view).seq([t.encode() for t in self.tips]).getvalue()

    def with_view(self, view: int) -> "Cut":
        return Cut(self.slot, view, self.tips)

    def for_slot(self, slot: int, view: int) -> "Cut":
        return Cut(slot, view, self.tips)

    def positions(self) -> tuple[int, ...]:
        return tuple(t.pos for t in self.tips)


def genesis_cut(n: int) -> Cut:
    return Cut(0, 0, tuple(TipRef.genesis(i) for i in range(n)))


def prepare_sign_digest(cut: Cut) -> Digest:
    return domain(b"PREPARE", cut.digest)


def prep_vote_digest(slot: int, view: int, dig: Digest) -> Digest:
    return domain(b"PREPVOTE", dig, slot, view)


def confirm_ack_digest(slot: int, view: int, dig: Digest) -> Digest:
    return domain(b"CONFACK", dig, slot, view)


def _sigs(votes: Iterable[Authenticator]) -> list[bytes]:
    return [v.encode() for v in votes]


@dataclass(frozen=True, slots=True)
class PrepareQC:
    slot: int
    view: int
    cut: Cut
    votes: tuple[Authenticator, ...]

    @property
    def dig(self) -> Digest:
        return self.cut.digest

    def encode(self) -> bytes:
        return Writer(b"PQC").u64(self.slot).u64(self.view).blob(self.cut.encode()).seq(_sigs(self.votes)).getvalue()


@dataclass(frozen=True, slots=True)
class CommitQC:
    slot: int
    view: int
    cut: Cut
    kind: str  # "fast" | "slow" | "genesis"
    votes: tuple[Authenticator, ...]

    @property
    def dig(self) -> Digest:
        return self.cut.digest

    def encode(self) -> bytes:
        return (
            Writer(b"CQC").u64(self.slot).u64(self.view).blob(self.kind.encode())
            .blob(self.cut.encode()).seq(_sigs(self.votes)).getvalue()
        )


def genesis_commit_qc(n: int) -> CommitQC:
    return CommitQC(0, 0, genesis_cut(n), "genesis", ())


@dataclass(frozen=True, slots=True)
class CommitTicket:
    qc: CommitQC


@dataclass(frozen=True, slots=True)
class TCTicket:
    tc: "TimeoutCertificate"


@dataclass(frozen=True, slots=True)
class ParallelTicket:
    prev_prepare: "Prepare | None"  # None only for slot 1 (genesis Prepare_0)
    qc: CommitQC


Ticket = CommitTicket | TCTicket | ParallelTicket


@dataclass(frozen=True, slots=True)
class Prepare:
    cut: Cut
    ticket: Ticket | None
    sig: Authenticator

    KIND = "prepare"

    @property
    def slot(self) -> int:
        return self.cut.slot

    @property
    def view(self) -> int:
        return self.cut.view

    @property
    def leader(self) -> ReplicaId:
        return self.sig.signer

    def stripped(self) -> "Prepare":
        return self if self.ticket is None else Prepare(self.cut, None, self.sig)

    def encode(self) -> bytes:
        w = Writer(b"PREP").blob(self.cut.encode()).blob(self.sig.encode())
        t = self.ticket
        if t is None:
            w.u8(0)
        elif isinstance(t, CommitTicket):
            w.u8(1).blob(t.qc.encode())
        elif isinstance(t, TCTicket):
            w.u8(2).blob(t.tc.encode())
        else:
            w.u8(3).opt(t.prev_prepare.encode() if t.prev_prepare else None).blob(t.qc.encode())
        return w.getvalue()


@dataclass(frozen=True, slots=True)
class PrepVote:
    slot: int
    view: int
    dig: Digest
    sig: Authenticator

    KIND = "prep_vote"

    def encode(self) -> bytes:
        return Writer(b"PVOT").u64(self.slot).u64(self.view).raw(self.dig).blob(self.sig.encode()).getvalue()


@dataclass(frozen=True, slots=True)
class Confirm:
    qc: PrepareQC

    KIND = "confirm"

    def encode(self) -> bytes:
        return Writer(b"CONF").blob(self.qc.encode()).getvalue()


@dataclass(frozen=True, slots=True)
class ConfirmAck:
    slot: int
    view: int
    dig: Digest
    sig: Authenticator

    KIND = "confirm_ack"

    def encode(self) -> bytes:
        return Writer(b"CACK").u64(self.slot).u64(self.view).raw(self.dig).blob(self.sig.encode()).getvalue()


@dataclass(frozen=True, slots=True)
class Commit:
    qc: CommitQC

    KIND = "commit"

    def encode(self) -> bytes:
        return Writer(b"CMIT").blob(self.qc.encode()).getvalue()


def timeout_sign_digest(slot: int, view: int, high_qc: PrepareQC | None, high_prop: Prepare | None) -> Digest:
    w = Writer(b"TIMEOUT").u64(slot).u64(view)
    w.opt(high_qc.cut.digest if high_qc else None)
    w.opt(high_prop.cut.digest if high_prop else None)
    return digest(w.getvalue())


@dataclass(frozen=True, slots=True)
class TimeoutMsg:
    slot: int
    view: int
    high_qc: PrepareQC | None
    high_prop: Prepare | None
    sig: Authenticator

    KIND = "timeout"

    def encode(self) -> bytes:
        return (
            Writer(b"TOUT").u64(self.slot).u64(self.view)
            .opt(self.high_qc.encode() if self.high_qc else None)
            .opt(self.high_prop.encode() if self.high_prop else None)
            .blob(self.sig.encode()).getvalue()
        )


@dataclass(frozen=True, slots=True)
class TimeoutCertificate:
    slot: int
    view: int
    timeouts: tuple[TimeoutMsg, ...]

    def encode(self) -> bytes:
        return Writer(b"TC").u64(self.slot).u64(self.view).seq([t.encode() for t in self.timeouts]).getvalue()


@dataclass(frozen=True, slots=True)
class TipRequest:
    lane: ReplicaId
    pos: int
    dig: Digest

    KIND = "tip_request"


@dataclass(frozen=True, slots=True)
class TipReply:
    proposal: DataProposal

    KIND = "tip_reply"


# -- pure rules ---------------------------------------------------------------


def leader_for(slot: int, view: int, n: int, offset: int) -> ReplicaId:
    """Round-robin within a slot; consecutive slots start ``offset`` apart."""
    return (slot * offset + view) % n


def check_coverage(local_tips: Iterable[TipRef], reference: Iterable[TipRef], threshold: int) -> bool:
    advanced = sum(1 for mine, ref in zip(local_tips, reference) if mine.pos > ref.pos)
    return advanced >= threshold


def parallel_ticket_check(slot: int, k: int, prepared: Iterable[int] | dict, committed: Iterable[int] | dict) -> bool:
    """Slot ``slot`` may start once Prepare(slot-1) and CommitQC(slot-k) are held.

    Slot 0 stands for the universally known genesis Prepare/CommitQC.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    prev_ok = slot - 1 <= 0 or (slot - 1) in prepared
    bound_ok = slot - k <= 0 or (slot - k) in committed
    return prev_ok and bound_ok


def winning_proposal(tc: TimeoutCertificate, f: int, rule: str = "correct") -> Cut | None:
    """Cut a view-change leader must re-propose, or None if it is free to choose.

    Candidate A is the cut of the highest-view PrepareQC in the TC; candidate B
    the highest-view cut whose signed Prepare appears at least f+1 times.  The
    higher view wins and A wins ties.  ``rule`` selects deliberately broken
    variants used for mutation testing.
    """
    if rule == "winner_none":
        return None
    a: PrepareQC | None = None
    if rule != "winner_ignore_qc":
        for t in tc.timeouts:
            if t.high_qc is not None and (a is None or t.high_qc.view > a.view):
                a = t.high_qc
    counts: dict[Digest, int] = {}
    cuts: dict[Digest, Cut] = {}
    for t in tc.timeouts:
        if t.high_prop is not None:
            c = t.high_prop.cut
            counts[c.digest] = counts.get(c.digest, 0) + 1
            cuts[c.digest] = c
    b: Cut | None = None
    for d, cnt in counts.items():
        c = cuts[d]
        if cnt >= f + 1 and (b is None or c.view > b.view):
            b = c
    if a is None:
        return b
    if b is None:
        return a.cut
    if rule == "winner_prefer_prop":
        return b if b.view >= a.view else a.cut
    return a.cut if a.view >= b.view else b


# -- validation -----------------------------------------------------------------


class Validator:
    """Signature and certificate checks shared by the replicas of one run."""

    def __init__(self, quorum: QuorumConfig, keys: KeyRing, cfg: ProtocolConfig):
        self.q = quorum
        self.keys = keys
        self.cfg = cfg
        self.offset = cfg.leader_offset if cfg.leader_offset is not None else quorum.f
        self._cache: dict[int, tuple[object, bool]] = {}

    def leader(self, slot: int, view: int) -> ReplicaId:
        return leader_for(slot, view, self.q.n, self.offset)

    def _memo(self, obj: object, fn: Callable[[], bool]) -> bool:
        hit = self._cache.get(id(obj))
        if hit is not None and hit[0] is obj:
            return hit[1]
        res = fn()
        if len(self._cache) > 200_000:
            self._cache.clear()
        self._cache[id(obj)] = (obj, res)
        return res

    def prepare_qc(self, qc: PrepareQC) -> bool:
        def check() -> bool:
            if qc.cut.slot != qc.slot or qc.cut.view != qc.view:
                return False
            return self.keys.verify_quorum(
                qc.votes, prep_vote_digest(qc.slot, qc.view, qc.dig), self.q.consensus_quorum
            )

        return self._memo(qc, check)

    def commit_qc(self, qc: CommitQC) -> bool:
        def check() -> bool:
            if qc.kind == "genesis":
                return qc.slot == 0 and qc.cut.digest == genesis_cut(self.q.n).digest
            if qc.slot < 1 or qc.cut.slot != qc.slot or qc.cut.view != qc.view:
                return False
            if qc.kind == "fast":
                return self.keys.verify_quorum(
                    qc.votes, prep_vote_digest(qc.slot, qc.view, qc.dig), self.q.fast_quorum
                )
            if qc.kind == "slow":
                return self.keys.verify_quorum(
                    qc.votes, confirm_ack_digest(qc.slot, qc.view, qc.dig), self.q.consensus_quorum
                )
            return False

        return self._memo(qc, check)

    def prepare_sig(self, p: Prepare) -> bool:
        if p.slot < 1 or p.leader != self.leader(p.slot, p.view):
            return False
        return self._memo(p, lambda: self.keys.verify(p.sig, prepare_sign_digest(p.cut)))

    def timeout(self, t: TimeoutMsg) -> bool:
        def check() -> bool:
            if not self.keys.verify(t.sig, timeout_sign_digest(t.slot, t.view, t.high_qc, t.high_prop)):
                return False
            if t.high_qc is not None:
                if t.high_qc.slot != t.slot or t.high_qc.view > t.view or not self.prepare_qc(t.high_qc):
                    return False
            if t.high_prop is not None:
                hp = t.high_prop
                if hp.slot != t.slot or hp.view > t.view or not self.prepare_sig(hp):
                    return False
            return True

        return self._memo(t, check)

    def tc(self, tc: TimeoutCertificate) -> bool:
        def check() -> bool:
            signers = set()
            for t in tc.timeouts:
                if t.slot != tc.slot or t.view != tc.view or t.sig.signer in signers:
                    return False
                if not self.timeout(t):
                    return False
                signers.add(t.sig.signer)
            return len(signers) >= self.q.consensus_quorum

        return self._memo(tc, check)

    def tip(self, t: TipRef, lane: int) -> bool:
        if t.lane != lane:
            return False
        if t.pos == 0:
            return t.dig == GENESIS_DIGEST and t.cert is None
        if t.cert is None:
            return True  # caller decides whether uncertified tips are admissible
        c = t.cert
        return c.lane == lane and c.pos == t.pos and c.dig == t.dig and self._memo(c, lambda: c.valid(self.keys, self.q))

    def cut_tips(self, cut: Cut, leader: ReplicaId, allow_leader_tip: bool, allow_optimistic: bool) -> bool:
        if len(cut.tips) != self.q.n:
            return False
        for i, t in enumerate(cut.tips):
            if not self.tip(t, i):
                return False
            if t.pos > 0 and t.cert is None:
                if allow_optimistic or (allow_leader_tip and i == leader):
                    continue
                return False
        return True

    def ticket(self, p: Prepare) -> bool:
        t = p.ticket
        s, v = p.slot, p.view
        if v > 0:
            return isinstance(t, TCTicket) and t.tc.slot == s and t.tc.view == v - 1 and self.tc(t.tc)
        if self.cfg.mode == "sequential":
            if not isinstance(t, CommitTicket) or t.qc.slot != s - 1:
                return False
            return self.commit_qc(t.qc)
        if not isinstance(t, ParallelTicket):
            return False
        if s == 1:
            if t.prev_prepare is not None:
                return False
        else:
            pp = t.prev_prepare
            if pp is None or pp.slot != s - 1 or not self.prepare_sig(pp):
                return False
        need = max(0, s - self.cfg.k)
        return t.qc.slot == need and self.commit_qc(t.qc)


# -- per-slot state machine ------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Deferred:
    missing: tuple[TipRef, ...]


@dataclass(frozen=True, slots=True)
class ArmFast:
    view: int


@dataclass(frozen=True, slots=True)
class JoinMutiny:
    timeout: TimeoutMsg


@dataclass(frozen=True, slots=True)
class FormedTC:
    tc: TimeoutCertificate


@dataclass(frozen=True, slots=True)
class ForwardCommit:
    qc: CommitQC
    to: ReplicaId


class SlotInstance:
    """Consensus state of one replica for one slot."""

    def __init__(self, slot: int, me: ReplicaId, validator: Validator):
        self.slot = slot
        self.me = me
        self.val = validator
        self.q = validator.q
        self.cfg = validator.cfg
        self.current_view = 0
        self.prop: Prepare | None = None
        self.conf: PrepareQC | None = None
        self.prep_voted: set[int] = set()
        self.acked: set[int] = set()
        self.timed_out: set[int] = set()
        self.timer_view: int | None = None
        self.commit: CommitQC | None = None
        self.timeouts: dict[int, dict[int, TimeoutMsg]] = {}
        self.tcs: dict[int, TimeoutCertificate] = {}
        self.deferred: dict[int, Prepare] = {}
        self.buffered: list[tuple[int, ReplicaId, object]] = []
        self.my_prepare: dict[int, Prepare] = {}
        self.prep_votes: dict[int, dict[int, Authenticator]] = {}
        self.fast_armed: set[int] = set()
        self.prepare_qcs: dict[int, PrepareQC] = {}
        self.acks: dict[int, dict[int, Authenticator]] = {}

    @property
    def committed(self) -> bool:
        return self.commit is not None

    def winner_rule(self) -> str:
        for m in ("winner_none", "winner_prefer_prop", "winner_ignore_qc"):
            if self.cfg.has(m):
                return m
        return "correct"

    # leader ---------------------------------------------------------------
    def try_propose(
        self,
        view: int,
        ticket: Ticket,
        local_tips: tuple[TipRef, ...],
        reference: tuple[TipRef, ...] | None = None,
        threshold: int | None = None,
    ) -> Prepare | None:
        if self.committed or view in self.my_prepare or view < self.current_view:
            return None
        if self.val.leader(self.slot, view) != self.me:
            return None
        if view == 0:
            thr = self.q.consensus_quorum if threshold is None else threshold
            if reference is not None and not check_coverage(local_tips, reference, thr):
                return None
            tips = local_tips
        else:
            assert isinstance(ticket, TCTicket)
            win = winning_proposal(ticket.tc, self.q.f, self.winner_rule())
            tips = win.tips if win is not None else local_tips
        cut = Cut(self.slot, view, tuple(tips))
        prep = Prepare(cut, ticket, self.val.keys.sign(self.me, prepare_sign_digest(cut)))
        self.my_prepare[view] = prep
        return prep

    # replica ------------------------------------------------------------------
    def handle_prepare(self, p: Prepare, have: Callable[[TipRef], bool] = lambda t: True) -> PrepVote | Rejected | Deferred:
        v = p.view
        if p.slot != self.slot:
            return Rejected("wrong_slot")
        if self.committed:
            return Rejected("committed")
        if v < self.current_view:
            return Rejected("stale_view")
        if v > self.current_view:
            return Rejected("future_view")
        if v in self.timed_out:
            return Rejected("timed_out_view")
        if p.leader != self.val.leader(self.slot, v):
            return Rejected("wrong_leader")
        if not self.val.prepare_sig(p):
            return Rejected("bad_signature")
        if not self.val.ticket(p):
            return Rejected("bad_ticket")
        reproposal = False
        if v > 0:
            assert isinstance(p.ticket, TCTicket)
            win = winning_proposal(p.ticket.tc, self.q.f, self.winner_rule())
            if win is not None:
                if win.tips != p.cut.tips:
                    return Rejected("not_winner")
                reproposal = True
        if not reproposal:
            ok = self.val.cut_tips(
                p.cut,
                p.leader,
                allow_leader_tip=self.cfg.leader_tips and v == 0,
                allow_optimistic=self.cfg.optimistic_tips and v == 0,
            )
            if not ok:
                return Rejected("bad_tips")
        if v in self.prep_voted and not self.cfg.has("double_vote"):
            return Rejected("already_voted_in_view")
        if not reproposal:
            missing = tuple(t for t in p.cut.tips if t.pos > 0 and t.cert is None and not have(t))
            if missing:
                self.deferred[v] = p
                return Deferred(missing)
        self.deferred.pop(v, None)
        self.prep_voted.add(v)
        if self.prop is None or v > self.prop.view:
            self.prop = p.stripped()
        d = p.cut.digest
        return PrepVote(self.slot, v, d, self.val.keys.sign(self.me, prep_vote_digest(self.slot, v, d)))

    def collect_prep_vote(self, vote: PrepVote) -> PrepareQC | CommitQC | ArmFast | None:
        mine = self.my_prepare.get(vote.view)
        if mine is None or vote.dig != mine.cut.digest or vote.slot != self.slot:
            return None
        if self.committed or vote.view in self.prepare_qcs:
            return None
        bucket = self.prep_votes.setdefault(vote.view, {})
        if vote.sig.signer in bucket:
            return None
        if not self.val.keys.verify(vote.sig, prep_vote_digest(vote.slot, vote.view, vote.dig)):
            return None
        bucket[vote.sig.signer] = vote.sig
        c = len(bucket)
        if self.cfg.fast_path and c >= self.q.fast_quorum:
            qc = CommitQC(self.slot, vote.view, mine.cut, "fast", self._sorted(bucket))
            self.commit = qc
            return qc
        if c >= self.q.consensus_quorum:
            if self.cfg.fast_path:
                if vote.view not in self.fast_armed:
                    self.fast_armed.add(vote.view)
                    return ArmFast(vote.view)
                return None
            return self._prepare_qc(vote.view)
        return None

    def fast_timer_expired(self, view: int) -> PrepareQC | None:
        if self.committed or view in self.prepare_qcs or view not in self.my_prepare:
            return None
        if view < self.current_view or view in self.timed_out:
            return None
        if len(self.prep_votes.get(view, ())) < self.q.consensus_quorum:
            return None
        return self._prepare_qc(view)

    def _prepare_qc(self, view: int) -> PrepareQC:
        qc = PrepareQC(self.slot, view, self.my_prepare[view].cut, self._sorted(self.prep_votes[view]))
        self.prepare_qcs[view] = qc
        return qc

    @staticmethod
    def _sorted(bucket: dict[int, Authenticator]) -> tuple[Authenticator, ...]:
        return tuple(bucket[s] for s in sorted(bucket))

    def handle_confirm(self, qc: PrepareQC, sender: ReplicaId = -1) -> ConfirmAck | None:
        if self.committed or qc.slot != self.slot:
            return None
        if qc.view < self.current_view:
            return None
        if qc.view > self.current_view:
            if len(self.buffered) < self.cfg.view_buffer_cap:
                self.buffered.append((qc.view, sender, Confirm(qc)))
            return None
        if qc.view in self.timed_out:
            return None
        if self.conf is None or qc.view > self.conf.view:
            self.conf = qc
        if qc.view in self.acked:
            return None
        self.acked.add(qc.view)
        return ConfirmAck(self.slot, qc.view, qc.dig, self.val.keys.sign(self.me, confirm_ack_digest(self.slot, qc.view, qc.dig)))

    def collect_confirm_ack(self, ack: ConfirmAck) -> CommitQC | None:
        pqc = self.prepare_qcs.get(ack.view)
        if pqc is None or ack.dig != pqc.dig or ack.slot != self.slot or self.committed:
            return None
        bucket = self.acks.setdefault(ack.view, {})
        if ack.sig.signer in bucket:
            return None
        if not self.val.keys.verify(ack.sig, confirm_ack_digest(ack.slot, ack.view, ack.dig)):
            return None
        bucket[ack.sig.signer] = ack.sig
        if len(bucket) >= self.q.consensus_quorum:
            qc = CommitQC(self.slot, ack.view, pqc.cut, "slow", self._sorted(bucket))
            self.commit = qc
            return qc
        return None

    # view change ----------------------------------------------------------------
    def make_timeout(self, view: int) -> TimeoutMsg:
        self.timed_out.add(view)
        hq, hp = self.conf, self.prop
        sig = self.val.keys.sign(self.me, timeout_sign_digest(self.slot, view, hq, hp))
        return TimeoutMsg(self.slot, view, hq, hp, sig)

    def on_timer_expiry(self, view: int) -> TimeoutMsg | None:
        if self.committed or view != self.current_view or view in self.timed_out:
            return None
        return self.make_timeout(view)

    def handle_timeout(self, tm: TimeoutMsg, sender: ReplicaId) -> list[JoinMutiny | FormedTC | ForwardCommit]:
        if self.commit is not None:
            return [ForwardCommit(self.commit, sender)] if sender != self.me else []
        if tm.view < self.current_view or tm.slot != self.slot:
            return []
        bucket = self.timeouts.setdefault(tm.view, {})
        if tm.sig.signer in bucket or not self.val.timeout(tm):
            return []
        bucket[tm.sig.signer] = tm
        out: list[JoinMutiny | FormedTC | ForwardCommit] = []
        if len(bucket) >= self.q.f + 1 and tm.view not in self.timed_out:
            out.append(JoinMutiny(self.make_timeout(tm.view)))
        if len(bucket) >= self.q.consensus_quorum and tm.view not in self.tcs:
            chosen = sorted(bucket)[: self.q.consensus_quorum]
            tc = TimeoutCertificate(self.slot, tm.view, tuple(bucket[s] for s in chosen))
            self.tcs[tm.view] = tc
            out.append(FormedTC(tc))
        return out

    def advance_to(self, view: int) -> list[tuple[ReplicaId, object]]:
        """Enter ``view``; returns buffered messages that now apply."""
        if view <= self.current_view:
            return []
        self.current_view = view
        ready = [(s, m) for (v, s, m) in self.buffered if v == view]
        self.buffered = [(v, s, m) for (v, s, m) in self.buffered if v > view]
        return ready
