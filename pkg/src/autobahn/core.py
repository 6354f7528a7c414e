"""Identifiers, digests, authenticators and quorum arithmetic.

Every protocol message has a canonical byte encoding built with
:class:`Writer`: integers are big-endian fixed width (u8, u32, u64), byte
strings and sequences are prefixed with a u32 length, optional fields are a
u8 presence flag followed by the field.  Digests are 32-byte BLAKE2b over
that encoding, so they are stable across processes and Python versions.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

ReplicaId = int
SlotNum = int
ViewNum = int
LanePos = int
Digest = bytes

DIGEST_SIZE = 32


@dataclass(frozen=True)
class QuorumConfig:
    n: int
    f: int

    @property
    def poa_quorum(self) -> int:
        return self.f + 1

    @property
    def consensus_quorum(self) -> int:
        return self.n - self.f

    @property
    def fast_quorum(self) -> int:
        return self.n


def quorum_sizes(n: int) -> QuorumConfig:
    """Quorum thresholds for ``n = 3f + 1`` replicas; other sizes are rejected."""
    if not isinstance(n, int) or n < 4 or (n - 1) % 3 != 0:
        raise ValueError(f"replica count must be 3f+1 with f >= 1, got {n!r}")
    return QuorumConfig(n=n, f=(n - 1) // 3)


def digest(data: bytes) -> Digest:
    return hashlib.blake2b(data, digest_size=DIGEST_SIZE).digest()


GENESIS_DIGEST: Digest = digest(b"autobahn/genesis")


class Writer:
    """Append-only canonical encoder."""

    __slots__ = ("_parts",)

    def __init__(self, tag: bytes = b""):
        self._parts: list[bytes] = [tag] if tag else []

    def u8(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">B", v))
        return self

    def u32(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">I", v))
        return self

    def u64(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">Q", v))
        return self

    def raw(self, b: bytes) -> "Writer":
        self._parts.append(b)
        return self

    def blob(self, b: bytes) -> "Writer":
        self._parts.append(struct.pack(">I", len(b)))
        self._parts.append(b)
        return self

    def opt(self, b: bytes | None) -> "Writer":
        if b is None:
            self._parts.append(b"\x00")
        else:
            self._parts.append(b"\x01")
            self.blob(b)
        return self

    def seq(self, items: list[bytes] | tuple[bytes, ...]) -> "Writer":
        self._parts.append(struct.pack(">I", len(items)))
        for it in items:
            self.blob(it)
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


@dataclass(frozen=True, slots=True)
class Authenticator:
    signer: ReplicaId
    tag: bytes

    def encode(self) -> bytes:
        return Writer().u32(self.signer).blob(self.tag).getvalue()


class KeyRing:
    """Keyed-hash signing scheme with one secret per replica.

    The simulator holds every key, so this is only forge-resistant against
    code that signs with its own id; Byzantine adapters obey that rule.
    """

    def __init__(self, n: int, seed: bytes = b"autobahn"):
        self.n = n
        self._keys = [
            hashlib.blake2b(seed + struct.pack(">I", i), digest_size=32).digest()
            for i in range(n)
        ]

    def sign(self, replica: ReplicaId, dig: Digest) -> Authenticator:
        key = self._keys[replica]
        tag = hashlib.blake2b(struct.pack(">I", replica) + dig, key=key, digest_size=16).digest()
        return Authenticator(replica, tag)

    def verify(self, auth: Authenticator, dig: Digest) -> bool:
        if not isinstance(auth, Authenticator) or not 0 <= auth.signer < self.n:
            return False
        key = self._keys[auth.signer]
        expect = hashlib.blake2b(
            struct.pack(">I", auth.signer) + dig, key=key, digest_size=16
        ).digest()
        return expect == auth.tag

    def verify_quorum(self, votes: tuple[Authenticator, ...], dig: Digest, threshold: int) -> bool:
        """True iff ``votes`` holds at least ``threshold`` distinct valid signers."""
        seen: set[int] = set()
        for a in votes:
            if a.signer in seen or not self.verify(a, dig):
                return False
            seen.add(a.signer)
        return len(seen) >= threshold


def domain(tag: bytes, dig: Digest, *ints: int) -> Digest:
    """Digest actually signed for a vote of kind ``tag`` over ``dig``."""
    w = Writer(tag)
    for i in ints:
        w.u64(i)
    return digest(w.raw(dig).getvalue())
