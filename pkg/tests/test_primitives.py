"""Hashing, Merkle commitments, identities, signatures."""

import hashlib

import pytest
from hypothesis import given, strategies as st

from ledgerlab.primitives import (
    DIGEST_ALGORITHM,
    DIGEST_LEN,
    EMPTY_ROOT,
    MerkleTree,
    ZERO_DIGEST,
    digest,
    identity_for,
    leading_zero_bits,
    merkle_root,
    sign,
    verify,
)

# Independent oracle: same pairing discipline, written recursively against
# hashlib directly so it shares no code with the implementation under test.


def _oracle_root(leaves):
    h = lambda b: hashlib.sha256(b).digest()
    if not leaves:
        return h(b"")
    if len(leaves) == 1:
        return h(leaves[0])
    level = list(leaves)
    while len(level) > 1:
        nxt = [h(level[i] + level[i + 1])
               for i in range(0, len(level) // 2 * 2, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


_LEAVES = [hashlib.sha256(bytes([i])).digest() for i in range(5)]


def test_digest_known_answer():
    # sha256 of the empty string, the published reference value
    assert DIGEST_ALGORITHM == "sha256"
    assert digest(b"").hex() == (
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855")
    assert len(digest(b"x")) == DIGEST_LEN
    assert ZERO_DIGEST == b"\x00" * 32


def test_leading_zero_bits():
    assert leading_zero_bits(b"\xff" + b"\x00" * 31) == 0
    assert leading_zero_bits(b"\x80" + b"\x00" * 31) == 0
    assert leading_zero_bits(b"\x7f" + b"\xff" * 31) == 1
    assert leading_zero_bits(b"\x00" + b"\xff" + b"\x00" * 30) == 8
    assert leading_zero_bits(b"\x00\x10" + b"\x00" * 30) == 11
    assert leading_zero_bits(b"\x00" * 32) == 256


def test_merkle_frozen_values():
    # frozen from the recursive oracle above
    assert merkle_root([]) == EMPTY_ROOT
    assert merkle_root(_LEAVES[:1]).hex() == (
        "1406e05881e299367766d313e26c05564ec91bf721d31726bd6e46e60689539a")
    assert merkle_root(_LEAVES[:2]).hex() == (
        "30e1867424e66e8b6d159246db94e3486778136f7e386ff5f001859d6b8484ab")
    assert merkle_root(_LEAVES[:4]).hex() == (
        "9675e04b4ba9dc81b06e81731e2d21caa2c95557a85dcfa3fff70c9ff0f30b2e")
    assert merkle_root(_LEAVES[:5]).hex() == (
        "5174b138f822e56503c04bce38e368672593b4a2694466c2e60f1216caf234be")


def test_merkle_odd_promotion_by_hand():
    # root over 5 leaves: H(H(H(l0 l1) + H(l2 l3)) + l4), the odd leaf rides up
    h = lambda b: hashlib.sha256(b).digest()
    l = _LEAVES
    want = h(h(h(l[0] + l[1]) + h(l[2] + l[3])) + l[4])
    assert merkle_root(l[:5]) == want


def test_merkle_rejects_bad_leaf_width():
    with pytest.raises(ValueError):
        merkle_root([b"short"])


@given(st.lists(st.binary(min_size=32, max_size=32), max_size=40))
def test_merkle_matches_oracle(leaves):
    assert merkle_root(leaves) == _oracle_root(leaves)


@given(st.lists(st.binary(min_size=32, max_size=32), min_size=2, max_size=12),
       st.data())
def test_merkle_sensitive_to_any_leaf(leaves, data):
    idx = data.draw(st.integers(min_value=0, max_value=len(leaves) - 1))
    flipped = leaves[idx][:0] + bytes([leaves[idx][0] ^ 1]) + leaves[idx][1:]
    mutated = leaves[:idx] + [flipped] + leaves[idx + 1:]
    assert merkle_root(leaves) != merkle_root(mutated)


def test_merkle_tree_verify():
    tree = MerkleTree.build(_LEAVES[:3])
    assert tree.verify()
    bad = MerkleTree(leaves=tree.leaves, root=ZERO_DIGEST)
    assert not bad.verify()


def test_identity_deterministic_and_distinct():
    a1 = identity_for("alice")
    a2 = identity_for("alice")
    b = identity_for("bob")
    assert a1 == a2
    assert a1.secret != b.secret
    assert len(a1.secret) == 32


def test_signature_roundtrip_and_tamper():
    alice = identity_for("alice")
    payload = digest(b"a payload")
    sig = sign(alice, payload)
    assert verify(sig, "alice", payload)
    assert not verify(sig, "bob", payload)
    assert not verify(sig, "alice", digest(b"other payload"))
    forged = sign(identity_for("bob"), payload)
    assert not verify(
        type(sig)(signer="alice", payload_digest=payload, tag=forged.tag),
        "alice", payload)


@given(st.text(min_size=1, max_size=24), st.binary(min_size=32, max_size=32))
def test_signature_sound_for_any_signer(signer_id, payload):
    sig = sign(identity_for(signer_id), payload)
    assert verify(sig, signer_id, payload)
