"""Hashing, Merkle commitments, and simulated identities/signatures.

The digest algorithm is pinned to SHA-256 and its name is written into every
scenario report header. Signatures are keyed-digest authenticators, not real
asymmetric crypto: a secret is derived per identity, the tag is
digest(secret || payload-digest), and verification recomputes the tag. That is
enough to make forgery detectable in-protocol, which is all the simulation needs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from . import codec
from .codec import Reader

DIGEST_ALGORITHM = "sha256"
DIGEST_LEN = 32

ZERO_DIGEST = b"\x00" * DIGEST_LEN


def digest(payload: bytes) -> bytes:
    """256-bit digest of a byte payload."""
    return hashlib.sha256(payload).digest()


EMPTY_ROOT = digest(b"")


def leading_zero_bits(d: bytes) -> int:
    """Number of leading zero bits in a 32-byte digest."""
    value = int.from_bytes(d, "big")
    if value == 0:
        return 256
    return 256 - value.bit_length()


# ---------------------------------------------------------------------------
# Merkle commitment

def merkle_root(leaves: list[bytes]) -> bytes:
    """Root of a binary Merkle tree over 32-byte leaf digests.

    Empty list commits to digest(b""). A single leaf commits to digest(leaf).
    At every level adjacent nodes are paired left-to-right; an odd trailing
    node is promoted to the next level unchanged, not duplicated.
    """
    if not leaves:
        return EMPTY_ROOT
    for leaf in leaves:
        if len(leaf) != DIGEST_LEN:
            raise ValueError("merkle leaves must be 32-byte digests")
    if len(leaves) == 1:
        return digest(leaves[0])
    level = list(leaves)
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            nxt.append(digest(level[i] + level[i + 1]))
        if len(level) % 2 == 1:
            nxt.append(level[-1])
        level = nxt
    return level[0]


@dataclass(frozen=True)
class MerkleTree:
    """Leaf digests plus their committed root."""

    leaves: tuple[bytes, ...]
    root: bytes

    @classmethod
    def build(cls, leaves: list[bytes]) -> "MerkleTree":
        return cls(leaves=tuple(leaves), root=merkle_root(list(leaves)))

    def verify(self) -> bool:
        return merkle_root(list(self.leaves)) == self.root


# ---------------------------------------------------------------------------
# Identities and signatures

_SECRET_TAG = b"ledgerlab/identity-secret/v1:"


@dataclass(frozen=True)
class Identity:
    """A participant: stable id plus derived signing secret."""

    id: str
    secret: bytes


def identity_for(identity_id: str) -> Identity:
    """Deterministic identity for an id. One id, one secret, everywhere."""
    return Identity(id=identity_id, secret=digest(_SECRET_TAG + identity_id.encode("utf-8")))


@dataclass(frozen=True)
class Signature:
    signer: str
    payload_digest: bytes
    tag: bytes

    def encode(self) -> bytes:
        return codec.enc_str(self.signer) + codec.enc_digest(self.payload_digest) + codec.enc_digest(self.tag)

    @classmethod
    def decode(cls, r: Reader) -> "Signature":
        return cls(signer=r.str_(), payload_digest=r.digest(), tag=r.digest())


def sign(identity: Identity, payload_digest: bytes) -> Signature:
    tag = digest(identity.secret + payload_digest)
    return Signature(signer=identity.id, payload_digest=payload_digest, tag=tag)


def verify(signature: Signature, signer: str, payload_digest: bytes) -> bool:
    """True iff the tag was produced with `signer`'s secret over this digest."""
    if signature.signer != signer or signature.payload_digest != payload_digest:
        return False
    expected = digest(identity_for(signer).secret + payload_digest)
    return signature.tag == expected
