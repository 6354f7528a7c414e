"""From committed cuts to one log: frontier tracking, sync, zipping, GC."""
from __future__ import annotations

import json
from collections.abc import Iterable
from dataclasses import dataclass, field
from typing import IO

from .core import Digest, KeyRing, ReplicaId
from .data_lane import DataProposal, LaneState, TipRef, proposal_digest, tx_id


class LastCommitMap:
    """Highest committed position per lane; never decreases."""

    def __init__(self, n: int):
        self._pos = [0] * n

    def __getitem__(self, lane: int) -> int:
        return self._pos[lane]

    def __len__(self) -> int:
        return len(self._pos)

    def advance(self, lane: int, pos: int) -> None:
        if pos > self._pos[lane]:
            self._pos[lane] = pos

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(self._pos)


@dataclass(frozen=True, slots=True)
class LogEntry:
    slot: int
    lane: ReplicaId
    pos: int
    proposal: DataProposal

    @property
    def dig(self) -> Digest:
        return self.proposal.digest

    def record(self, index: int) -> dict:
        return {
            "index": index,
            "slot": self.slot,
            "lane": self.lane,
            "pos": self.pos,
            "digest": self.dig.hex(),
            "txs": len(self.proposal.batch),
        }


class Log:
    """Append-only total order; the only store that survives GC."""

    def __init__(self) -> None:
        self.entries: list[LogEntry] = []
        self.by_pos: dict[tuple[int, int], LogEntry] = {}
        self.by_dig: dict[Digest, LogEntry] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, e: LogEntry) -> int:
        key = (e.lane, e.pos)
        if key in self.by_pos:
            raise ValueError(f"duplicate log entry for lane {e.lane} pos {e.pos}")
        self.entries.append(e)
        self.by_pos[key] = e
        self.by_dig[e.dig] = e
        return len(self.entries) - 1

    def export_ndjson(self, fp: IO[str]) -> None:
        for i, e in enumerate(self.entries):
            fp.write(json.dumps(e.record(i), sort_keys=True) + "\n")


@dataclass(frozen=True, slots=True)
class SyncRequest:
    lane: ReplicaId
    from_pos: int
    to_pos: int
    tip_dig: Digest

    KIND = "sync_request"


@dataclass(frozen=True, slots=True)
class SyncReply:
    lane: ReplicaId
    from_pos: int
    to_pos: int
    tip_dig: Digest
    chain: tuple[DataProposal, ...]

    KIND = "sync_reply"


@dataclass(frozen=True, slots=True)
class NotServable:
    lane: ReplicaId
    tip_dig: Digest
    reason: str = "missing_history"

    KIND = "not_servable"


@dataclass
class PendingCommit:
    slot: int
    cut: "object"  # consensus.Cut; kept loose to avoid an import cycle
    missing: dict[int, SyncRequest] = field(default_factory=dict)

    @property
    def ready(self) -> bool:
        return not self.missing


def _lookup(lane: LaneState, log: Log, pos: int, dig: Digest) -> DataProposal | None:
    p = lane.proposals.get(dig)
    if p is not None:
        return p
    b = lane.buffer.get(pos)
    if b is not None and b.digest == dig:
        return b
    e = log.by_dig.get(dig)
    return e.proposal if e is not None else None


def local_chain(lane: LaneState, log: Log, tip: TipRef, floor: int) -> list[DataProposal] | None:
    """Proposals ``floor+1 .. tip.pos`` following the tip's parents, oldest first.

    Returns None if any link is missing locally.
    """
    out: list[DataProposal] = []
    pos, dig = tip.pos, tip.dig
    while pos > floor:
        p = _lookup(lane, log, pos, dig)
        if p is None or p.pos != pos:
            return None
        out.append(p)
        pos, dig = pos - 1, p.parent  # type: ignore[assignment]
    out.reverse()
    return out


def on_commit(slot: int, cut, lanes: list[LaneState], log: Log, last_commit: LastCommitMap) -> PendingCommit:
    """Queue a committed cut; one SyncRequest per lane whose history is incomplete."""
    pending = PendingCommit(slot, cut)
    for tip in cut.tips:
        req = sync_need(tip, lanes[tip.lane], log, last_commit[tip.lane])
        if req is not None:
            pending.missing[tip.lane] = req
    return pending


def sync_need(tip: TipRef, lane: LaneState, log: Log, last_commit: int) -> SyncRequest | None:
    if tip.pos <= last_commit:
        return None  # stale tip from an earlier-ordered slot
    if local_chain(lane, log, tip, last_commit) is not None:
        return None
    return SyncRequest(tip.lane, last_commit + 1, tip.pos, tip.dig)


def sync_targets(tip: TipRef, me: ReplicaId, n: int) -> list[ReplicaId]:
    """Replicas to probe, in order: PoA signers by id, or the lane owner first."""
    if tip.cert is not None:
        order = tip.cert.signers()
    else:
        order = [tip.lane] + [r for r in range(n) if r != tip.lane]
    return [r for r in order if r != me]


def handle_sync_request(req: SyncRequest, lane: LaneState, log: Log) -> SyncReply | NotServable:
    if req.from_pos < 1 or req.to_pos < req.from_pos:
        return NotServable(req.lane, req.tip_dig, "bad_range")
    chain = local_chain(lane, log, TipRef(req.lane, req.to_pos, req.tip_dig), req.from_pos - 1)
    if chain is None:
        return NotServable(req.lane, req.tip_dig)
    return SyncReply(req.lane, req.from_pos, req.to_pos, req.tip_dig, tuple(chain))


def check_sync_reply(req: SyncRequest, reply: SyncReply, keys: KeyRing | None = None) -> str | None:
    """None if the reply is a correct suffix for ``req``, else the rejection reason."""
    if reply.lane != req.lane or reply.tip_dig != req.tip_dig:
        return "digest_mismatch"
    chain = reply.chain
    if len(chain) != req.to_pos - req.from_pos + 1:
        return "wrong_count"
    prev: DataProposal | None = None
    for i, p in enumerate(chain):
        if p.lane != req.lane or p.pos != req.from_pos + i:
            return "broken_chain"
        if proposal_digest(p.lane, p.pos, p.batch, p.parent) != p.digest:
            return "broken_chain"
        if keys is not None and (p.sig.signer != p.lane or not keys.verify(p.sig, p.digest)):
            return "broken_chain"
        if prev is not None and p.parent != prev.digest:
            return "broken_chain"
        prev = p
    if chain[-1].digest != req.tip_dig:
        return "digest_mismatch"
    return None


def zip_round_robin(per_lane: Iterable[list[DataProposal]]) -> list[DataProposal]:
    """Interleave lanes in id order, oldest first within each lane."""
    lists = list(per_lane)
    out: list[DataProposal] = []
    i = 0
    while True:
        took = False
        for chain in lists:
            if i < len(chain):
                out.append(chain[i])
                took = True
        if not took:
            return out
        i += 1


def finalize_slot(
    pending: PendingCommit, lanes: list[LaneState], last_commit: LastCommitMap, log: Log
) -> list[LogEntry]:
    """Append the slot's new proposals to ``log`` and advance ``last_commit``."""
    chains: list[list[DataProposal]] = []
    for tip in pending.cut.tips:
        lc = last_commit[tip.lane]
        if tip.pos <= lc:
            chains.append([])
            continue
        chain = local_chain(lanes[tip.lane], log, tip, lc)
        if chain is None:
            raise RuntimeError(f"slot {pending.slot}: lane {tip.lane} history incomplete")
        chains.append(chain)
    out = []
    for p in zip_round_robin(chains):
        e = LogEntry(pending.slot, p.lane, p.pos, p)
        log.append(e)
        out.append(e)
    for tip in pending.cut.tips:
        last_commit.advance(tip.lane, tip.pos)
    return out


@dataclass
class GCSummary:
    commit_qcs: int = 0
    proposals: int = 0


def garbage_collect(
    commits: dict[int, object], lanes: list[LaneState], last_commit: LastCommitMap, finalized_slot: int, k: int
) -> GCSummary:
    """Drop CommitQC(s-k) and lane data at or below the committed frontier."""
    s = GCSummary()
    for slot in [x for x in commits if 0 < x <= finalized_slot - k]:
        del commits[slot]
        s.commit_qcs += 1
    for lane in lanes:
        s.proposals += lane.prune(last_commit[lane.lane])
    return s


def committed_tx_ids(entries: Iterable[LogEntry]) -> list[int]:
    return [tx_id(t) for e in entries for t in e.proposal.batch]
