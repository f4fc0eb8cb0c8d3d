"""Account-chain ledger: lifecycle, forks, voting, rollback, pruning."""

from dataclasses import replace

import pytest

from ledgerlab.errors import NotFoundError
from ledgerlab.lattice import (
    BlockKind,
    DuplicateReceiveError,
    InsufficientBalanceError,
    InvalidAmountError,
    LatticeLedger,
    LatticeVerdict,
    NodeTier,
    OutcomeStatus,
    StalePredecessorError,
    build_block,
    make_vote,
    resolve_fork,
)
from ledgerlab.leader_election import WorkCounter, check_pow
from ledgerlab.primitives import identity_for


def _ledger(**kw):
    genesis = kw.pop("genesis", {"a": (100, "w8"), "w8": (700, "w8"),
                                 "w2": (200, "w2")})
    return LatticeLedger(genesis, **kw)


def _apply(ledger, block, now=1.0, votes=()):
    outcome = ledger.receive_block(block, now, votes=votes)
    return outcome


# -- genesis ----------------------------------------------------------------


def test_genesis_allocation_and_weights():
    ledger = _ledger()
    assert ledger.total_balance == 1000
    assert ledger.genesis_supply == 1000
    assert ledger.total_pending == 0
    assert ledger.balance("a") == 100
    assert ledger.representative_weight("w8") == 800
    assert ledger.representative_weight("w2") == 200
    assert ledger.recompute_weights() == {"w8": 800, "w2": 200}
    assert ledger.total_delegated_weight() == 1000
    settled, pending = ledger.audit_totals()
    assert (settled, pending) == (1000, 0)


# -- send / receive lifecycle -----------------------------------------------


def test_send_then_receive_moves_value():
    ledger = _ledger()
    send = ledger.create_send("a", "w2", 30)
    out = _apply(ledger, send)
    assert out.status is OutcomeStatus.APPLIED
    assert ledger.balance("a") == 70
    assert ledger.total_pending == 30
    assert ledger.pending[send.digest()].recipient == "w2"

    recv = ledger.create_receive("w2", send.digest())
    out2 = _apply(ledger, recv, now=2.0)
    assert out2.status is OutcomeStatus.APPLIED
    assert ledger.balance("w2") == 230
    assert ledger.total_pending == 0
    assert ledger.settled_of[send.digest()] == ("w2", recv.digest())
    # delegated weight followed the balance
    assert ledger.representative_weight("w2") == 230
    assert ledger.representative_weight("w8") == 770


def test_create_send_error_paths():
    ledger = _ledger()
    with pytest.raises(InvalidAmountError):
        ledger.create_send("a", "w2", 0)
    with pytest.raises(InsufficientBalanceError):
        ledger.create_send("a", "w2", 101)
    with pytest.raises(NotFoundError):
        ledger.create_send("a", "nobody", 5)
    with pytest.raises(NotFoundError):
        ledger.create_send("ghost", "a", 5)
    send = ledger.create_send("a", "w2", 5)
    stale = ledger.accounts["a"].head
    _apply(ledger, send)
    with pytest.raises(StalePredecessorError):
        ledger.create_send("a", "w2", 5, head=stale)


def test_create_receive_error_paths():
    ledger = _ledger()
    send = ledger.create_send("a", "w2", 5)
    _apply(ledger, send)
    with pytest.raises(NotFoundError):
        ledger.create_receive("w8", send.digest())  # addressed to w2
    with pytest.raises(NotFoundError):
        ledger.create_receive("w2", b"\x01" * 32)
    recv = ledger.create_receive("w2", send.digest())
    _apply(ledger, recv)
    with pytest.raises(DuplicateReceiveError):
        ledger.create_receive("w2", send.digest())


def test_duplicate_block_and_duplicate_receive_verdicts():
    ledger = _ledger()
    send = ledger.create_send("a", "w2", 5)
    _apply(ledger, send)
    again = _apply(ledger, send)
    assert again.status is OutcomeStatus.DUPLICATE

    recv = ledger.create_receive("w2", send.digest())
    _apply(ledger, recv)
    second_receive = build_block(identity_for("w2"),
                                 ledger.accounts["w2"].head,
                                 BlockKind.RECEIVE, amount=5,
                                 counterparty=send.digest())
    out = _apply(ledger, second_receive)
    assert out.status is OutcomeStatus.REJECTED
    assert out.verdict is LatticeVerdict.DUPLICATE_RECEIVE


def test_bad_signature_and_bad_pow_verdicts():
    ledger = _ledger(spam_bits=8)
    send = ledger.create_send("a", "w2", 5)
    tampered = replace(send, amount=6)
    out = _apply(ledger, tampered)
    assert out.status is OutcomeStatus.REJECTED
    assert out.verdict is LatticeVerdict.BAD_SIGNATURE

    lazy = build_block(identity_for("a"), ledger.accounts["a"].head,
                       BlockKind.SEND, amount=5, counterparty="w2",
                       spam_bits=0)
    if check_pow(lazy.signing_digest(), lazy.antispam_nonce, 8):
        pytest.skip("zero-effort nonce cleared 8 bits by chance")
    out2 = _apply(ledger, lazy)
    assert out2.status is OutcomeStatus.REJECTED
    assert out2.verdict is LatticeVerdict.BAD_POW


def test_overspend_rejected():
    ledger = _ledger()
    greedy = build_block(identity_for("a"), ledger.accounts["a"].head,
                         BlockKind.SEND, amount=1_000, counterparty="w2")
    out = _apply(ledger, greedy)
    assert out.status is OutcomeStatus.REJECTED
    assert out.verdict is LatticeVerdict.INSUFFICIENT_BALANCE


def test_antispam_work_is_attached_and_checked():
    counter = WorkCounter()
    ledger = _ledger(spam_bits=6)
    send = ledger.create_send("a", "w2", 5, counter=counter)
    assert counter.evaluations >= 1
    assert check_pow(send.signing_digest(), send.antispam_nonce, 6)
    assert _apply(ledger, send).status is OutcomeStatus.APPLIED


# -- gaps -------------------------------------------------------------------


def test_gap_parks_until_predecessor_arrives():
    ledger = _ledger()
    feeder = _ledger()
    s1 = feeder.create_send("a", "w2", 5)
    feeder.receive_block(s1, 0.5)
    s2 = feeder.create_send("a", "w2", 7)

    out = _apply(ledger, s2)
    assert out.status is OutcomeStatus.PARKED
    assert ledger.balance("a") == 100

    out2 = _apply(ledger, s1)
    assert out2.status is OutcomeStatus.APPLIED
    # parked successor drained in the same call
    assert [b.digest() for b in out2.applied] == [s1.digest(), s2.digest()]
    assert ledger.balance("a") == 88
    assert not ledger.parked


def test_gap_buffer_evicts_oldest():
    ledger = _ledger(gap_buffer=2)
    feeder = _ledger()
    blocks = []
    for i in range(4):
        s = feeder.create_send("a", "w2", 1 + i)
        feeder.receive_block(s, 0.5)
        blocks.append(s)
    # deliver the three successors of the missing first block, newest last
    for s in blocks[1:]:
        _apply(ledger, s)
    assert len(ledger.parked) == 2
    parked_digests = set(ledger.parked)
    assert blocks[1].digest() not in parked_digests  # oldest fell out


# -- forks and voting -------------------------------------------------------


def _conflicting_sends(ledger):
    fork_point = ledger.accounts["a"].head
    others = sorted(set(ledger.accounts) - {"a"})
    s1 = ledger.create_send("a", others[0], 10)
    s2 = build_block(identity_for("a"), fork_point, BlockKind.SEND,
                     amount=20, counterparty=others[1])
    return fork_point, s1, s2


def test_fork_opens_conflict_and_majority_resolves():
    ledger = _ledger()
    fork_point, s1, s2 = _conflicting_sends(ledger)
    assert _apply(ledger, s1).status is OutcomeStatus.APPLIED

    out = _apply(ledger, s2, now=2.0)
    assert out.status is OutcomeStatus.CONFLICT
    assert out.verdict is LatticeVerdict.FORK_DETECTED
    assert ledger.open_conflicts() == [("a", fork_point)]

    # 800 of 1000 delegated weight backs the newcomer: supermajority flips it
    vote = make_vote(identity_for("w8"), fork_point, s2.digest(), 800)
    res_out = ledger.add_vote(vote, 3.0)
    assert [r.winner for r in res_out.resolutions] == [s2.digest()]
    assert ledger.resolved_winners[("a", fork_point)] == s2.digest()
    assert ledger.accounts["a"].head == s2.digest()
    assert ledger.balance("a") == 80
    assert s1.digest() not in ledger.pending
    assert ledger.pending[s2.digest()].amount == 20
    assert not ledger.open_conflicts()

    # the loser is already seen, and a fresh third fork is dead on arrival
    assert _apply(ledger, s1, now=4.0).status is OutcomeStatus.DUPLICATE
    s3 = build_block(identity_for("a"), fork_point, BlockKind.SEND,
                     amount=1, counterparty="w8")
    rej = _apply(ledger, s3, now=5.0)
    assert rej.status is OutcomeStatus.REJECTED
    assert rej.verdict is LatticeVerdict.FORK_DETECTED


def test_incumbent_survives_when_majority_backs_it():
    ledger = _ledger()
    fork_point, s1, s2 = _conflicting_sends(ledger)
    _apply(ledger, s1)
    _apply(ledger, s2, now=2.0)
    vote = make_vote(identity_for("w8"), fork_point, s1.digest(), 800)
    ledger.add_vote(vote, 3.0)
    assert ledger.resolved_winners[("a", fork_point)] == s1.digest()
    assert ledger.accounts["a"].head == s1.digest()
    assert ledger.balance("a") == 90


def test_votes_accumulate_to_quorum():
    ledger = _ledger(genesis={"a": (100, "r1"), "r1": (300, "r1"),
                              "r2": (600, "r2")})
    fork_point, s1, s2 = _conflicting_sends(ledger)
    _apply(ledger, s1)
    _apply(ledger, s2, now=2.0)
    # 400 of 1000 is under the 0.5 quorum: stays open
    ledger.add_vote(make_vote(identity_for("r1"), fork_point, s2.digest(), 400), 3.0)
    assert ledger.open_conflicts() == [("a", fork_point)]
    out = ledger.add_vote(make_vote(identity_for("r2"), fork_point, s2.digest(), 600), 4.0)
    assert [r.winner for r in out.resolutions] == [s2.digest()]
    assert not ledger.open_conflicts()


def test_exact_tie_is_flagged_and_stays_open():
    ledger = _ledger(genesis={"a": (100, "r1"), "r1": (400, "r1"),
                              "r2": (500, "r2")})
    assert ledger.representative_weight("r1") == 500
    assert ledger.representative_weight("r2") == 500
    fork_point, s1, s2 = _conflicting_sends(ledger)
    _apply(ledger, s1)
    # both votes land with the fork so the first tally already sees the split
    out = _apply(ledger, s2, now=2.0, votes=[
        make_vote(identity_for("r1"), fork_point, s1.digest(), 500),
        make_vote(identity_for("r2"), fork_point, s2.digest(), 500),
    ])
    assert out.status is OutcomeStatus.CONFLICT
    assert ("a", fork_point) in ledger.flagged_ties
    assert ledger.open_conflicts() == [("a", fork_point)]
    assert ledger.accounts["a"].head == s1.digest()  # incumbent holds


def test_first_vote_per_rep_and_subject_stands():
    ledger = _ledger()
    fork_point, s1, s2 = _conflicting_sends(ledger)
    _apply(ledger, s1)
    _apply(ledger, s2, now=2.0)
    ledger.add_vote(make_vote(identity_for("w2"), fork_point, s1.digest(), 200), 3.0)
    # the same representative trying to flip is ignored
    ledger.add_vote(make_vote(identity_for("w2"), fork_point, s2.digest(), 200), 4.0)
    conflict = ledger.conflicts[("a", fork_point)]
    assert conflict.resolved is None
    assert conflict.votes["w2"].choice == s1.digest()


def test_losing_branch_rollback_cascades_through_receives():
    ledger = _ledger(genesis={"a": (100, "w8"), "b": (50, "w8"),
                              "w8": (650, "w8"), "w2": (200, "w2")})
    fork_point = ledger.accounts["a"].head
    s1 = ledger.create_send("a", "b", 50)
    _apply(ledger, s1)
    r1 = ledger.create_receive("b", s1.digest())
    _apply(ledger, r1, now=2.0)
    assert ledger.balance("b") == 100

    s2 = build_block(identity_for("a"), fork_point, BlockKind.SEND,
                     amount=60, counterparty="w2")
    out = _apply(ledger, s2, now=3.0)
    assert out.status is OutcomeStatus.CONFLICT
    res = ledger.add_vote(
        make_vote(identity_for("w8"), fork_point, s2.digest(), 800), 4.0)
    assert [r.winner for r in res.resolutions] == [s2.digest()]

    # the receive on b's chain was built on the discarded send: unwound too
    assert ledger.balance("b") == 50
    assert ledger.accounts["b"].head != r1.digest()
    assert ledger.balance("a") == 40
    assert s1.digest() not in ledger.pending
    assert ledger.pending[s2.digest()].amount == 60
    assert ledger.total_balance + ledger.total_pending == ledger.genesis_supply


def test_resolve_fork_tally_rules():
    c1, c2 = b"\x01" * 32, b"\x02" * 32
    mk = lambda rep, choice, w: make_vote(identity_for(rep), b"\x00" * 32, choice, w)
    win, tallies, tied = resolve_fork(
        [c1, c2], [mk("x", c1, 800), mk("y", c2, 200)], 1000)
    assert win == c1 and not tied
    assert tallies == {c1: 800, c2: 200}
    win, _t, tied = resolve_fork([c1, c2], [mk("x", c1, 500), mk("y", c2, 500)], 1000)
    assert win is None and tied
    win, _t, tied = resolve_fork([c1, c2], [mk("x", c1, 400)], 1000)
    assert win is None and not tied  # under quorum
    win, _t, _ = resolve_fork([c1, c2], [mk("x", c1, 501)], 1000)
    assert win == c1


# -- representative changes -------------------------------------------------


def test_rep_change_moves_delegated_weight():
    ledger = _ledger()
    change = ledger.create_rep_change("a", "w2")
    out = _apply(ledger, change)
    assert out.status is OutcomeStatus.APPLIED
    assert ledger.representative_weight("w8") == 700
    assert ledger.representative_weight("w2") == 300
    assert ledger.recompute_weights() == {"w8": 700, "w2": 300}
    with pytest.raises(NotFoundError):
        ledger.create_rep_change("a", "nobody")


# -- cementing --------------------------------------------------------------


def test_cementing_disabled_reports_false():
    ledger = _ledger()
    send = ledger.create_send("a", "w2", 5)
    _apply(ledger, send)
    assert not ledger.cement_eligible(send.digest(), now=1e9)


def test_cementing_settles_after_delay_and_blocks_forks():
    ledger = _ledger(cement_delay_s=5.0)
    fork_point = ledger.accounts["a"].head
    send = ledger.create_send("a", "w2", 5)
    _apply(ledger, send, now=1.0)
    # unsettled sends never cement
    assert not ledger.cement_eligible(send.digest(), now=100.0)
    recv = ledger.create_receive("w2", send.digest())
    _apply(ledger, recv, now=2.0)
    assert not ledger.cement_eligible(send.digest(), now=4.0)  # delay not met
    assert ledger.cement_eligible(send.digest(), now=6.5)
    assert not ledger.cement_eligible(recv.digest(), now=6.5)
    assert ledger.cement_eligible(recv.digest(), now=7.5)

    rival = build_block(identity_for("a"), fork_point, BlockKind.SEND,
                        amount=7, counterparty="w2")
    out = _apply(ledger, rival, now=8.0)
    assert out.status is OutcomeStatus.REJECTED
    assert out.detail == "incumbent block is cemented"
    assert not ledger.open_conflicts()


def test_fork_before_cement_delay_still_opens():
    ledger = _ledger(cement_delay_s=50.0)
    fork_point, s1, s2 = _conflicting_sends(ledger)
    _apply(ledger, s1, now=1.0)
    out = _apply(ledger, s2, now=2.0)
    assert out.status is OutcomeStatus.CONFLICT


# -- tiers and pruning ------------------------------------------------------


def _stream(n=4):
    feeder = _ledger()
    blocks = []
    for i in range(n):
        s = feeder.create_send("a", "w2", 1 + i)
        feeder.receive_block(s, 0.5)
        blocks.append(s)
        r = feeder.create_receive("w2", s.digest())
        feeder.receive_block(r, 0.6)
        blocks.append(r)
    return blocks


def test_current_tier_node_tracks_historical_twin():
    historical = _ledger()
    trimmed = _ledger()
    blocks = _stream(4)
    for blk in blocks[:4]:
        assert (_apply(historical, blk).status
                == _apply(trimmed, blk).status)
    report = trimmed.prune_to_current()
    assert trimmed.tier is NodeTier.CURRENT
    assert report.bytes_after < report.bytes_before
    for blk in blocks[4:]:
        assert (_apply(historical, blk).status
                == _apply(trimmed, blk).status)
    for account in historical.accounts:
        assert historical.balance(account) == trimmed.balance(account)

    # fork off pruned history: the digest index still says fork, not gap
    old_pred = blocks[0].predecessor
    rival = build_block(identity_for("a"), old_pred, BlockKind.SEND,
                        amount=9, counterparty="w2")
    vh = historical.validate_block(rival)
    vt = trimmed.validate_block(rival)
    assert vh == vt
    assert vh[0] is LatticeVerdict.FORK_DETECTED


def test_prune_keeps_only_heads():
    ledger = _ledger()
    for blk in _stream(3):
        _apply(ledger, blk)
    report = ledger.prune_to_current()
    assert set(report.pruned_accounts) == {"a", "w2", "w8"}
    assert not report.skipped_accounts
    for chain in ledger.accounts.values():
        assert set(chain.blocks) == {chain.head}
    assert ledger.recount_bytes() == ledger.ledger_bytes()


def test_prune_skips_accounts_with_open_conflicts():
    ledger = _ledger()
    fork_point, s1, s2 = _conflicting_sends(ledger)
    _apply(ledger, s1)
    _apply(ledger, s2, now=2.0)
    report = ledger.prune_to_current()
    assert "a" in report.skipped_accounts
    assert ledger.tier is NodeTier.HISTORICAL


# -- size accounting --------------------------------------------------------


def test_byte_counters_match_recount_after_churn():
    ledger = _ledger()
    fork_point, s1, s2 = _conflicting_sends(ledger)
    _apply(ledger, s1)
    recv = ledger.create_receive(ledger.pending[s1.digest()].recipient,
                                 s1.digest())
    _apply(ledger, recv)
    _apply(ledger, s2, now=2.0)
    ledger.add_vote(make_vote(identity_for("w8"), fork_point, s2.digest(), 800), 3.0)
    assert ledger.recount_bytes() == ledger.ledger_bytes()
