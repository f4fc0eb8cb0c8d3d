"""Chain store: assembly, validation verdicts, reorgs, pruning, fast sync."""

from dataclasses import replace

import pytest

from ledgerlab.blockchain import (
    AccountChange,
    ChainStore,
    GrindProof,
    HistoryPrunedError,
    LotteryProof,
    PosProof,
    SyncError,
    Verdict,
    assemble_block,
    fast_sync,
    make_transaction,
)
from ledgerlab.errors import ConfigError, NotFoundError
from ledgerlab.leader_election import (
    DifficultySchedule,
    StakeRegistry,
    mine,
    pos_select,
)
from ledgerlab.primitives import identity_for, sign

ALICE = identity_for("alice")
BOB = identity_for("bob")


def _store(reward=50, reorg_safety=8, difficulty=1.0):
    return ChainStore(
        genesis_allocation={"alice": 1000, "bob": 500},
        block_reward=reward,
        proof_rule=LotteryProof(),
        schedule=DifficultySchedule(2.0, 16, difficulty),
        reorg_safety=reorg_safety,
    )


def _extend(store, txs=(), producer="miner-0", parent=None, ts=None):
    parent = parent if parent is not None else store.adopted_head
    ts = ts if ts is not None else float(store.blocks[parent].height + 1)
    block = assemble_block(store, parent, txs, capacity=10_000,
                           producer=producer, timestamp=ts)
    result = store.validate_block(block)
    assert result.ok, (result.verdict, result.detail)
    return block, store.adopt(block, result)


# -- assembly ---------------------------------------------------------------


def test_assembly_packs_greedily_and_skips_the_unfit():
    store = _store()
    heavy = make_transaction(ALICE, "carol", 10, sequence=1, weight=9_500)
    too_big = make_transaction(ALICE, "carol", 10, sequence=2, weight=9_000)
    light = make_transaction(BOB, "carol", 5, sequence=1, weight=400)
    block = assemble_block(store, store.adopted_head, [heavy, too_big, light],
                           capacity=10_000, producer="miner-0", timestamp=1.0)
    # too_big exceeds remaining capacity, later light one still packs
    assert block.transactions == (heavy, light)


def test_assembly_skips_overspend_and_stale_sequence():
    store = _store()
    _extend(store, [make_transaction(ALICE, "bob", 100, 1, 10)])
    stale = make_transaction(ALICE, "bob", 1, sequence=1, weight=10)
    broke = make_transaction(ALICE, "bob", 10_000, sequence=2, weight=10)
    fine = make_transaction(ALICE, "bob", 1, sequence=2, weight=10)
    block = assemble_block(store, store.adopted_head, [stale, broke, fine],
                           capacity=1_000, producer="miner-0", timestamp=2.0)
    assert block.transactions == (fine,)


def test_assembly_respects_funds_spent_earlier_in_the_block():
    store = _store()
    a = make_transaction(ALICE, "bob", 900, sequence=1, weight=10)
    b = make_transaction(ALICE, "bob", 900, sequence=2, weight=10)
    block = assemble_block(store, store.adopted_head, [a, b], capacity=1_000,
                           producer="miner-0", timestamp=1.0)
    assert block.transactions == (a,)


# -- validation verdicts ----------------------------------------------------


def test_validate_accepts_and_updates_state():
    store = _store()
    tx = make_transaction(ALICE, "bob", 100, sequence=1, weight=10)
    _block, report = _extend(store, [tx])
    assert report.head_moved
    assert store.balance("alice") == 900
    assert store.balance("bob") == 600
    assert store.balance("miner-0") == 50
    assert store.head_state.sequence("alice") == 1


def test_validate_unknown_parent():
    store = _store()
    other = _store()
    _extend(other, [])
    block, _ = _extend(other, [])
    assert store.validate_block(block).verdict is Verdict.UNKNOWN_PARENT


def test_validate_wrong_height():
    store = _store()
    block = assemble_block(store, store.adopted_head, [], 1_000, "m", 1.0)
    bad = replace(block, header=replace(block.header, height=5))
    assert store.validate_block(bad).verdict is Verdict.UNKNOWN_PARENT


def test_validate_bad_tx_root():
    store = _store()
    tx = make_transaction(ALICE, "bob", 1, 1, 10)
    block = assemble_block(store, store.adopted_head, [tx], 1_000, "m", 1.0)
    bad = replace(block, transactions=())
    assert store.validate_block(bad).verdict is Verdict.BAD_ROOT


def test_validate_bad_state_root():
    store = _store()
    block = assemble_block(store, store.adopted_head, [], 1_000, "m", 1.0)
    bad = replace(block, header=replace(block.header, state_root=b"\x00" * 32))
    assert store.validate_block(bad).verdict is Verdict.BAD_ROOT


def test_validate_bad_signature():
    store = _store()
    tx = make_transaction(ALICE, "bob", 1, 1, 10)
    forged = replace(tx, amount=2)  # signature no longer covers the payload
    block = assemble_block(store, store.adopted_head, [tx], 1_000, "m", 1.0)
    bad = replace(block, transactions=(forged,),
                  header=replace(block.header, tx_root=__import__(
                      "ledgerlab.primitives", fromlist=["merkle_root"]
                  ).merkle_root([forged.digest()])))
    assert store.validate_block(bad).verdict is Verdict.BAD_SIGNATURE


def test_validate_overspend_is_double_spend():
    store = _store()
    tx = make_transaction(ALICE, "bob", 5_000, 1, 10)
    block = assemble_block(store, store.adopted_head, [], 1_000, "m", 1.0)
    from ledgerlab.primitives import merkle_root
    bad = replace(block, transactions=(tx,),
                  header=replace(block.header, tx_root=merkle_root([tx.digest()])))
    assert store.validate_block(bad).verdict is Verdict.DOUBLE_SPEND


def test_validate_sequence_reuse():
    store = _store()
    tx1 = make_transaction(ALICE, "bob", 10, 1, 10)
    _extend(store, [tx1])
    again = make_transaction(ALICE, "bob", 10, 1, 10)
    from ledgerlab.primitives import merkle_root
    block = assemble_block(store, store.adopted_head, [], 1_000, "m", 2.0)
    bad = replace(block, transactions=(again,),
                  header=replace(block.header, tx_root=merkle_root([again.digest()])))
    assert store.validate_block(bad).verdict is Verdict.BAD_SEQUENCE


# -- reorgs -----------------------------------------------------------------


def test_depth_two_reorg_returns_dropped_transactions():
    store = _store()
    genesis = store.adopted_head
    tx_a = make_transaction(ALICE, "bob", 100, sequence=1, weight=10)
    tx_shared = make_transaction(BOB, "carol", 7, sequence=1, weight=10)
    a1, _ = _extend(store, [tx_a, tx_shared], producer="miner-a", ts=1.0)
    a2, _ = _extend(store, [], producer="miner-a", ts=2.0)
    assert store.head_height == 2

    # competing branch from genesis carries only the shared transaction
    b1, rep1 = _extend(store, [tx_shared], producer="miner-b",
                       parent=genesis, ts=1.5)
    assert not rep1.head_moved  # same length loses to first-seen
    b2, rep2 = _extend(store, [], producer="miner-b", parent=b1.digest(), ts=2.5)
    assert not rep2.head_moved
    b3, rep3 = _extend(store, [], producer="miner-b", parent=b2.digest(), ts=3.5)
    assert rep3.head_moved
    assert set(rep3.orphaned) == {a1.digest(), a2.digest()}
    assert rep3.reorged_in == (b1.digest(), b2.digest(), b3.digest())
    # tx_a fell out and is not on the new branch; tx_shared is, so only tx_a returns
    assert rep3.returned_transactions == (tx_a,)
    assert store.balance("alice") == 1000
    assert store.balance("carol") == 7


def test_adopt_duplicate_is_flagged():
    store = _store()
    block, _ = _extend(store)
    result = store.validate_block(block)  # would fail; use stored path instead
    report = store.adopt(block, result)
    assert report.duplicate
    assert not report.head_moved


# -- confirmations ----------------------------------------------------------


def test_confirmation_depth_counts_from_inclusion():
    store = _store()
    tx = make_transaction(ALICE, "bob", 10, 1, 10)
    _extend(store, [tx])
    assert store.confirmations(tx.digest()) == 1
    for _ in range(5):
        _extend(store)
    assert store.confirmations(tx.digest()) == 6
    with pytest.raises(NotFoundError):
        store.confirmations(b"\x11" * 32)


def test_confirmations_none_when_orphan_only():
    store = _store()
    genesis = store.adopted_head
    tx = make_transaction(ALICE, "bob", 10, 1, 10)
    a1, _ = _extend(store, [tx], ts=1.0)
    b1, _ = _extend(store, [], parent=genesis, ts=1.5)
    b2, _ = _extend(store, [], parent=b1.digest(), ts=2.5)
    assert store.adopted_head == b2.digest()
    assert store.confirmations(tx.digest()) is None


# -- state deltas -----------------------------------------------------------


def test_delta_revert_restores_parent_state_exactly():
    store = _store()
    parent_state = store.head_state.copy()
    tx = make_transaction(ALICE, "carol", 42, 1, 10)  # carol springs into being
    block, _ = _extend(store, [tx])
    state = store.head_state.copy()
    store.deltas[block.digest()].revert(state)
    assert state.balances == parent_state.balances
    assert state.sequences == parent_state.sequences
    assert "carol" not in state.balances


def test_delta_existed_before_false_only_for_new_accounts():
    store = _store()
    tx = make_transaction(ALICE, "carol", 42, 1, 10)
    block, _ = _extend(store, [tx])
    changes = store.deltas[block.digest()].changes
    assert changes["alice"].existed_before
    assert not changes["carol"].existed_before


def test_state_at_walks_to_side_branches():
    store = _store()
    genesis = store.adopted_head
    _extend(store, [make_transaction(ALICE, "bob", 100, 1, 10)], ts=1.0)
    side, _ = _extend(store, [make_transaction(ALICE, "bob", 1, 1, 10)],
                      parent=genesis, ts=1.5)
    at_side = store.state_at(side.digest())
    assert at_side.balance("alice") == 999
    assert store.balance("alice") == 900  # head unaffected


# -- conservation -----------------------------------------------------------


def test_supply_tracks_reward_issuance():
    store = _store(reward=50)
    for _ in range(7):
        _extend(store, [make_transaction(ALICE, "bob", 5,
                                         store.head_state.sequence("alice") + 1,
                                         10)])
    assert store.total_supply() == store.expected_supply() == 1500 + 7 * 50


# -- pruning ----------------------------------------------------------------


def test_prune_drops_old_bodies_and_keeps_answers():
    store = _store(reorg_safety=8)
    seq = 0
    for i in range(40):
        seq += 1
        _extend(store, [make_transaction(ALICE, "bob", 1, seq, 10)])
    before = store.recount_bytes()
    report = store.prune(keep_recent=10)
    assert report.cutoff_height == 30
    # genesis carries an empty body but never had a delta
    assert report.bodies_dropped == 30
    assert report.deltas_dropped == 29
    assert report.bytes_after < report.bytes_before
    assert store.recount_bytes() == store.ledger_bytes()
    assert sum(store.ledger_bytes().values()) < sum(before.values())
    # balances come from head state, untouched by pruning
    assert store.balance("alice") == 1000 - 40
    # deep history is gone
    old = store.adopted_chain()[5]
    with pytest.raises(HistoryPrunedError):
        store.state_at(old)


def test_prune_respects_reorg_safety_floor():
    store = _store(reorg_safety=8)
    with pytest.raises(ConfigError):
        store.prune(keep_recent=4)


def test_pruned_node_validates_like_archive():
    archive = _store(reorg_safety=8)
    pruned = _store(reorg_safety=8)
    seq = 0
    for _ in range(30):
        seq += 1
        tx = make_transaction(ALICE, "bob", 1, seq, 10)
        block = assemble_block(archive, archive.adopted_head, [tx], 1_000,
                               "m", float(seq))
        for st in (archive, pruned):
            res = st.validate_block(block)
            assert res.ok
            st.adopt(block, res)
    pruned.prune(keep_recent=10)
    # identical verdicts on a fresh stream after pruning
    for _ in range(5):
        seq += 1
        tx = make_transaction(ALICE, "bob", 1, seq, 10)
        block = assemble_block(archive, archive.adopted_head, [tx], 1_000,
                               "m", float(seq))
        ra = archive.validate_block(block)
        rp = pruned.validate_block(block)
        assert (ra.verdict, ra.detail) == (rp.verdict, rp.detail)
        archive.adopt(block, ra)
        pruned.adopt(block, rp)
    assert archive.head_state.root() == pruned.head_state.root()


# -- fast sync --------------------------------------------------------------


def _grow(store, n, start_seq):
    seq = start_seq
    for _ in range(n):
        seq += 1
        _extend(store, [make_transaction(ALICE, "bob", 1, seq, 10)])
    return seq


def test_fast_sync_pivot_replay_matches_source():
    source = _store()
    _grow(source, 60, 0)
    fresh = fast_sync(source, pivot_offset=16)
    assert fresh.adopted_head == source.adopted_head
    assert fresh.head_state.root() == source.head_state.root()
    assert fresh.first_full_block_height == 60 - 16
    # headers exist below the pivot, bodies do not
    below = source.adopted_chain()[10]
    assert fresh.blocks[below].transactions is None


def test_fast_sync_short_chain_full_replay():
    source = _store()
    _grow(source, 10, 0)
    fresh = fast_sync(source, pivot_offset=16)
    assert fresh.head_state.root() == source.head_state.root()
    assert fresh.first_full_block_height == 0


def test_fast_sync_refuses_overpruned_source():
    source = _store(reorg_safety=8)
    _grow(source, 60, 0)
    source.prune(keep_recent=10)  # full blocks start at height 50
    with pytest.raises(SyncError):
        fast_sync(source, pivot_offset=16)  # pivot at 44 < 50


# -- proof rules ------------------------------------------------------------


def test_grind_proof_gates_on_nonce():
    store = _store(difficulty=256.0)  # 8 bits
    store.proof_rule = GrindProof()
    block = assemble_block(store, store.adopted_head, [], 1_000, "m", 1.0)
    unmined = store.validate_block(block)
    assert unmined.verdict is Verdict.BAD_PROOF
    nonce = mine(block.header.work_digest(), 8, seed=1)
    mined = replace(block, header=replace(block.header, nonce=nonce))
    assert store.validate_block(mined).ok


def test_pos_proof_enforces_slot_grid_and_producer():
    registry = StakeRegistry(deposits={"val-0": 100, "val-1": 200})
    rule = PosProof(registry, run_seed=9, slot_interval_s=1.0)
    store = ChainStore({"alice": 1000}, block_reward=0, proof_rule=rule)
    leader = pos_select(registry, 9, 3)
    other = "val-0" if leader == "val-1" else "val-1"
    good = assemble_block(store, store.adopted_head, [], 1_000, leader, 3.0)
    assert store.validate_block(good).ok
    wrong_producer = assemble_block(store, store.adopted_head, [], 1_000,
                                    other, 3.0)
    assert store.validate_block(wrong_producer).verdict is Verdict.BAD_PROOF
    off_grid = assemble_block(store, store.adopted_head, [], 1_000,
                              leader, 3.01)
    assert store.validate_block(off_grid).verdict is Verdict.BAD_PROOF
