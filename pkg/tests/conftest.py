"""Shared builders for hand-made certificates and lanes."""
from __future__ import annotations

import pytest

from autobahn.config import ProtocolConfig
from autobahn.consensus import (
    CommitQC,
    Cut,
    ParallelTicket,
    Prepare,
    PrepareQC,
    TimeoutCertificate,
    TimeoutMsg,
    Validator,
    confirm_ack_digest,
    genesis_commit_qc,
    prep_vote_digest,
    prepare_sign_digest,
    timeout_sign_digest,
)
from autobahn.core import KeyRing, quorum_sizes
from autobahn.data_lane import LaneState, ProofOfAvailability, TipRef, data_vote_digest, make_tx


class Kit:
    """Keys plus a validator for one replica set, with signing shortcuts."""

    def __init__(self, n: int = 4, **cfg):
        self.q = quorum_sizes(n)
        self.n, self.f = n, self.q.f
        self.keys = KeyRing(n)
        self.cfg = ProtocolConfig(**cfg)
        self.val = Validator(self.q, self.keys, self.cfg)

    # data layer
    def lanes(self, lane: int) -> list[LaneState]:
        return [LaneState(lane, r, self.q, self.keys) for r in range(self.n)]

    def poa(self, prop, signers=None) -> ProofOfAvailability:
        signers = signers if signers is not None else range(self.q.poa_quorum)
        d = data_vote_digest(prop.lane, prop.pos, prop.digest)
        return ProofOfAvailability(prop.lane, prop.pos, prop.digest, tuple(self.keys.sign(s, d) for s in signers))

    def grow(self, lane: int, count: int, owner: LaneState | None = None):
        """Owner-side chain of ``count`` certified cars; returns (owner, proposals)."""
        owner = owner or LaneState(lane, lane, self.q, self.keys)
        props = []
        for i in range(count):
            p = owner.create_proposal([make_tx((lane << 40) | (owner.proposed + 1))])
            owner.learn_poa(self.poa(p), verified=True)
            owner.chain[p.pos] = p.digest
            owner.proposals[p.digest] = p
            owner.voted = p.pos
            props.append(p)
        return owner, props

    def tip(self, prop, certified: bool = True) -> TipRef:
        return TipRef(prop.lane, prop.pos, prop.digest, self.poa(prop) if certified else None)

    # consensus
    def genesis_tips(self) -> tuple[TipRef, ...]:
        return tuple(TipRef.genesis(i) for i in range(self.n))

    def prepare(self, slot: int, view: int, tips=None, ticket=None) -> Prepare:
        cut = Cut(slot, view, tuple(tips) if tips is not None else self.genesis_tips())
        leader = self.val.leader(slot, view)
        return Prepare(cut, ticket, self.keys.sign(leader, prepare_sign_digest(cut)))

    def first_ticket(self) -> ParallelTicket:
        return ParallelTicket(None, genesis_commit_qc(self.n))

    def prepare_qc(self, p: Prepare, signers=None) -> PrepareQC:
        signers = signers if signers is not None else range(self.q.consensus_quorum)
        d = prep_vote_digest(p.slot, p.view, p.cut.digest)
        return PrepareQC(p.slot, p.view, p.cut, tuple(self.keys.sign(s, d) for s in signers))

    def commit_qc(self, p: Prepare, kind: str = "slow") -> CommitQC:
        if kind == "fast":
            d = prep_vote_digest(p.slot, p.view, p.cut.digest)
            signers = range(self.n)
        else:
            d = confirm_ack_digest(p.slot, p.view, p.cut.digest)
            signers = range(self.q.consensus_quorum)
        return CommitQC(p.slot, p.view, p.cut, kind, tuple(self.keys.sign(s, d) for s in signers))

    def timeout(self, slot: int, view: int, signer: int, hq=None, hp=None) -> TimeoutMsg:
        hp = hp.stripped() if hp is not None else None
        return TimeoutMsg(slot, view, hq, hp, self.keys.sign(signer, timeout_sign_digest(slot, view, hq, hp)))

    def tc(self, slot: int, view: int, contents) -> TimeoutCertificate:
        """``contents`` is a list of (signer, highQC, highProp)."""
        return TimeoutCertificate(slot, view, tuple(self.timeout(slot, view, s, hq, hp) for s, hq, hp in contents))


@pytest.fixture
def kit() -> Kit:
    return Kit(4)
