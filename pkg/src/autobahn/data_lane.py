"""Per-lane car protocol: chained proposals, in-order voting, proofs of availability.

Encodings (all via :class:`autobahn.core.Writer`):

* DataProposal header: ``"PROP" | u32 lane | u64 pos | seq(batch) | opt(parent)``.
  Its digest is the proposal identity; ``parent_cert`` and the author
  signature are evidence and are not hashed.
* Data vote signs ``domain("DVOTE", dig, lane, pos)``.
* ProofOfAvailability: ``u32 lane | u64 pos | dig | seq(vote authenticators)``.
* TipRef: ``u32 lane | u64 pos | dig``; the optional certificate is evidence.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .core import (
    GENESIS_DIGEST,
    Authenticator,
    Digest,
    KeyRing,
    LanePos,
    QuorumConfig,
    ReplicaId,
    Writer,
    digest,
    domain,
)

DEFAULT_BUFFER_CAP = 1024


def tx_id(tx: bytes) -> int:
    return struct.unpack_from(">Q", tx)[0]


def make_tx(ident: int, size: int = 8) -> bytes:
    body = struct.pack(">Q", ident)
    return body + b"\x00" * max(0, size - len(body))


def proposal_digest(lane: int, pos: int, batch: tuple[bytes, ...], parent: Digest | None) -> Digest:
    return digest(Writer(b"PROP").u32(lane).u64(pos).seq(batch).opt(parent).getvalue())


def data_vote_digest(lane: int, pos: int, dig: Digest) -> Digest:
    return domain(b"DVOTE", dig, lane, pos)


@dataclass(frozen=True, slots=True)
class ProofOfAvailability:
    lane: ReplicaId
    pos: LanePos
    dig: Digest
    votes: tuple[Authenticator, ...]

    def encode(self) -> bytes:
        return (
            Writer()
            .u32(self.lane)
            .u64(self.pos)
            .raw(self.dig)
            .seq([v.encode() for v in self.votes])
            .getvalue()
        )

    def signers(self) -> list[int]:
        return sorted(v.signer for v in self.votes)

    def valid(self, keys: KeyRing, quorum: QuorumConfig) -> bool:
        return keys.verify_quorum(
            self.votes, data_vote_digest(self.lane, self.pos, self.dig), quorum.poa_quorum
        )


@dataclass(frozen=True, slots=True)
class DataProposal:
    lane: ReplicaId
    pos: LanePos
    batch: tuple[bytes, ...]
    parent: Digest | None
    parent_cert: ProofOfAvailability | None
    sig: Authenticator
    digest: Digest = field(compare=False, repr=False, default=b"")

    KIND = "proposal"

    def __post_init__(self) -> None:
        if not self.digest:
            object.__setattr__(
                self, "digest", proposal_digest(self.lane, self.pos, self.batch, self.parent)
            )

    def encode(self) -> bytes:
        w = Writer(b"PROP").u32(self.lane).u64(self.pos).seq(self.batch).opt(self.parent)
        w.opt(self.parent_cert.encode() if self.parent_cert else None)
        return w.blob(self.sig.encode()).getvalue()

    @property
    def size(self) -> int:
        return len(self.batch)


@dataclass(frozen=True, slots=True)
class VoteMsg:
    lane: ReplicaId
    pos: LanePos
    dig: Digest
    sig: Authenticator

    KIND = "vote"

    def encode(self) -> bytes:
        return Writer(b"DVOT").u32(self.lane).u64(self.pos).raw(self.dig).blob(self.sig.encode()).getvalue()


@dataclass(frozen=True, slots=True)
class PoAMsg:
    """Standalone broadcast of a fresh PoA when no batch is pending."""

    poa: ProofOfAvailability

    KIND = "poa"


@dataclass(frozen=True, slots=True)
class TipRef:
    lane: ReplicaId
    pos: LanePos
    dig: Digest
    cert: ProofOfAvailability | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.cert is not None and (self.cert.dig != self.dig or self.cert.pos != self.pos):
            raise ValueError("tip certificate does not match tip reference")

    def encode(self) -> bytes:
        return Writer().u32(self.lane).u64(self.pos).raw(self.dig).getvalue()

    @property
    def certified(self) -> bool:
        return self.cert is not None or self.pos == 0

    @staticmethod
    def genesis(lane: ReplicaId) -> "TipRef":
        return TipRef(lane, 0, GENESIS_DIGEST, None)


@dataclass(frozen=True, slots=True)
class Voted:
    vote: VoteMsg


@dataclass(frozen=True, slots=True)
class Buffered:
    reason: str = "missing_parent"


@dataclass(frozen=True, slots=True)
class Rejected:
    reason: str


class LaneError(Exception):
    pass


class LaneState:
    """One replica's view of one lane.

    ``voted`` is the vote high-water mark: the replica never votes again at or
    below it.  ``chain`` maps positions to the digests this replica follows
    (its own votes, or a chain adopted after synchronization) and is what the
    parent check compares against.
    """

    def __init__(
        self,
        lane: ReplicaId,
        me: ReplicaId,
        quorum: QuorumConfig,
        keys: KeyRing,
        batch_cap: int = 1000,
        buffer_cap: int = DEFAULT_BUFFER_CAP,
    ):
        self.lane = lane
        self.me = me
        self.quorum = quorum
        self.keys = keys
        self.batch_cap = batch_cap
        self.buffer_cap = buffer_cap

        self.voted = 0
        self.chain: dict[int, Digest] = {}
        self.proposals: dict[Digest, DataProposal] = {}
        self.poas: dict[Digest, ProofOfAvailability] = {}
        self.best_poa: ProofOfAvailability | None = None
        self.buffer: dict[int, DataProposal] = {}

        # proposer side, only used when lane == me
        self.proposed = 0
        self.outstanding: DataProposal | None = None
        self._votes: dict[int, Authenticator] = {}

    # -- queries -----------------------------------------------------------
    @property
    def max_cert_pos(self) -> int:
        return self.best_poa.pos if self.best_poa else 0

    def certified_tip(self) -> TipRef:
        if self.best_poa is None:
            return TipRef.genesis(self.lane)
        p = self.best_poa
        return TipRef(self.lane, p.pos, p.dig, p)

    def optimistic_tip(self) -> TipRef:
        """Highest broadcast (own lane) or voted proposal, without certificate."""
        if self.lane == self.me and self.proposed:
            pos = self.proposed
        else:
            pos = self.voted
        dig = self.chain.get(pos)
        if pos == 0 or dig is None or dig not in self.proposals:
            return self.certified_tip()
        cert = self.poas.get(dig)
        return TipRef(self.lane, pos, dig, cert)

    def has(self, dig: Digest) -> bool:
        return dig in self.proposals

    def get(self, dig: Digest) -> DataProposal | None:
        return self.proposals.get(dig)

    # -- certificates ----------------------------------------------------------
    def learn_poa(self, poa: ProofOfAvailability, verified: bool = False) -> bool:
        """Record a PoA; returns True if it raised the certified tip."""
        if poa.lane != self.lane:
            return False
        if poa.dig in self.poas:
            return False
        if not verified and not poa.valid(self.keys, self.quorum):
            return False
        self.poas[poa.dig] = poa
        if self.best_poa is None or poa.pos > self.best_poa.pos:
            self.best_poa = poa
            return True
        return False

    # -- proposer ----------------------------------------------------------------
    def create_proposal(self, batch: list[bytes] | tuple[bytes, ...]) -> DataProposal:
        if self.lane != self.me:
            raise LaneError("only the lane owner proposes")
        if len(batch) > self.batch_cap:
            raise LaneError(f"batch of {len(batch)} exceeds cap {self.batch_cap}")
        pos = self.proposed + 1
        parent = cert = None
        if pos > 1:
            parent = self.chain.get(pos - 1)
            cert = self.poas.get(parent) if parent is not None else None
            if cert is None:
                raise LaneError(f"position {pos - 1} is not certified yet")
        batch = tuple(batch)
        dig = proposal_digest(self.lane, pos, batch, parent)
        prop = DataProposal(self.lane, pos, batch, parent, cert, self.keys.sign(self.me, dig), dig)
        self.proposed = pos
        self.outstanding = prop
        self._votes = {}
        return prop

    @property
    def can_propose(self) -> bool:
        if self.proposed == 0:
            return True
        dig = self.chain.get(self.proposed)
        return dig is not None and dig in self.poas

    def handle_vote(self, vote: VoteMsg) -> ProofOfAvailability | None:
        out = self.outstanding
        if out is None or vote.lane != self.lane or vote.pos != out.pos or vote.dig != out.digest:
            return None
        if vote.sig.signer in self._votes:
            return None
        if not self.keys.verify(vote.sig, data_vote_digest(vote.lane, vote.pos, vote.dig)):
            return None
        self._votes[vote.sig.signer] = vote.sig
        if len(self._votes) < self.quorum.poa_quorum:
            return None
        votes = tuple(self._votes[s] for s in sorted(self._votes))
        poa = ProofOfAvailability(self.lane, out.pos, out.digest, votes)
        assert len({v.signer for v in votes}) >= self.quorum.poa_quorum
        self.learn_poa(poa, verified=True)
        self.outstanding = None
        self._votes = {}
        return poa

    # -- voter -----------------------------------------------------------------
    def _check(self, prop: DataProposal) -> Rejected | None:
        if prop.lane != self.lane:
            return Rejected("wrong_lane")
        if prop.sig.signer != self.lane or not self.keys.verify(prop.sig, prop.digest):
            return Rejected("bad_signature")
        if prop.pos < 1 or len(prop.batch) > self.batch_cap:
            return Rejected("malformed")
        if (prop.pos == 1) != (prop.parent is None) or (prop.parent is None) != (prop.parent_cert is None):
            return Rejected("malformed")
        if prop.parent_cert is not None:
            c = prop.parent_cert
            if c.lane != self.lane or c.pos != prop.pos - 1 or c.dig != prop.parent:
                return Rejected("bad_cert")
            if c.dig not in self.poas:
                if not c.valid(self.keys, self.quorum):
                    return Rejected("bad_cert")
                self.learn_poa(c, verified=True)
        return None

    def handle_proposal(self, prop: DataProposal) -> Voted | Buffered | Rejected:
        bad = self._check(prop)
        if bad is not None:
            return bad
        if prop.pos <= self.voted:
            return Rejected("duplicate_position")
        if prop.pos > self.voted + 1:
            held = self.buffer.get(prop.pos)
            if held is not None:
                return Buffered() if held.digest == prop.digest else Rejected("duplicate_position")
            if len(self.buffer) >= self.buffer_cap:
                return Rejected("buffer_full")
            self.buffer[prop.pos] = prop
            return Buffered()
        return self._vote(prop)

    def _vote(self, prop: DataProposal) -> Voted | Rejected:
        if prop.pos > 1 and self.chain.get(prop.pos - 1) != prop.parent:
            return Rejected("parent_mismatch")
        self.proposals[prop.digest] = prop
        self.chain[prop.pos] = prop.digest
        self.voted = prop.pos
        sig = self.keys.sign(self.me, data_vote_digest(self.lane, prop.pos, prop.digest))
        return Voted(VoteMsg(self.lane, prop.pos, prop.digest, sig))

    def replay_buffered(self) -> list[VoteMsg]:
        """Vote on buffered proposals whose parent gap has been filled."""
        out: list[VoteMsg] = []
        for pos in [p for p in self.buffer if p <= self.voted]:
            del self.buffer[pos]
        while self.voted + 1 in self.buffer:
            res = self._vote(self.buffer.pop(self.voted + 1))
            if isinstance(res, Voted):
                out.append(res.vote)
            else:
                break
        return out

    # -- synchronization ---------------------------------------------------------
    def store(self, prop: DataProposal) -> bool:
        """Store a proposal obtained outside the voting path (tip fetch)."""
        if self._check(prop) is not None:
            return False
        self.proposals[prop.digest] = prop
        return True

    def adopt_chain(self, chain: list[DataProposal], last_commit: int) -> bool:
        """Take a verified, hash-linked suffix as this replica's chain.

        Adoption only happens when the suffix connects to data already held
        (positions up to ``max(voted, last_commit)``), so a later vote never
        skips over missing history.
        """
        if not chain:
            return False
        for p in chain:
            self.proposals[p.digest] = p
            if p.parent_cert is not None:
                self.learn_poa(p.parent_cert, verified=True)
        first, last = chain[0].pos, chain[-1].pos
        if first > max(self.voted, last_commit) + 1 or last <= self.voted:
            return False
        for p in chain:
            self.chain[p.pos] = p.digest
        self.voted = last
        if self.lane == self.me:
            self.proposed = max(self.proposed, last)
        return True

    def prune(self, last_commit: int) -> int:
        """Drop stored proposals at or below ``last_commit`` (log keeps committed ones)."""
        dead = [d for d, p in self.proposals.items() if p.pos <= last_commit]
        for d in dead:
            del self.proposals[d]
        for d in [d for d, c in self.poas.items() if c.pos < last_commit and c is not self.best_poa]:
            del self.poas[d]
        for pos in [p for p in self.chain if p < min(self.voted, last_commit)]:
            del self.chain[pos]
        for pos in [p for p in self.buffer if p <= last_commit]:
            del self.buffer[pos]
        return len(dead)

    def uncertified_waste(self, last_commit: int, committed: set[Digest] | None = None) -> int:
        """Transactions held above the highest known certified position."""
        cut = max(self.max_cert_pos, last_commit)
        held = list(self.proposals.values()) + list(self.buffer.values())
        seen: set[Digest] = set()
        total = 0
        for p in held:
            if p.pos > cut and p.digest not in seen and not (committed and p.digest in committed):
                seen.add(p.digest)
                total += len(p.batch)
        return total
