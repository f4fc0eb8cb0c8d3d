"""Block-lattice ledger: one chain per account, settlement in two halves.

A transfer is a send block on the sender's chain (funds leave immediately)
plus a receive block on the recipient's chain (funds arrive when the
recipient signs them in). Until the receive lands the amount sits in the
pending set, owned by nobody's spendable balance.

Conflicts are two blocks claiming the same predecessor slot of one account.
They are settled by representative vote: each account delegates its settled
balance to a representative, representatives vote for the first valid
candidate they see, and a candidate wins when its summed vote weight is
strictly greatest and clears the quorum fraction of all delegated weight.
Losing blocks and everything built on them are rolled back.

Blocks that reference an unknown predecessor (or an unseen send) are parked
in a bounded FIFO gap buffer and replayed when the missing piece arrives.
"""

from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from . import codec
from .codec import Reader
from .errors import InvariantViolation, LedgerError, NotFoundError
from .leader_election import WorkCounter, antispam_pow, check_pow
from .primitives import ZERO_DIGEST, Identity, Signature, digest, identity_for, sign, verify

DEFAULT_QUORUM_FRACTION = 0.5
DEFAULT_GAP_BUFFER = 10_000


class InvalidAmountError(LedgerError):
    """Send amount must be strictly positive."""


class InsufficientBalanceError(LedgerError):
    """Send amount exceeds the account's settled balance."""


class StalePredecessorError(LedgerError):
    """Block creation raced a head move; caller must rebuild on the new head."""


class DuplicateReceiveError(LedgerError):
    """The named send was already received."""


class BlockKind(enum.Enum):
    GENESIS = 0
    SEND = 1
    RECEIVE = 2
    REP_CHANGE = 3


class NodeTier(enum.Enum):
    HISTORICAL = "historical"  # every block of every chain
    CURRENT = "current"        # head blocks only
    LIGHT = "light"            # no ledger, observe/create only


@dataclass(frozen=True)
class LatticeBlock:
    """One block on one account's chain.

    counterparty is the recipient account id for sends and the matched send's
    digest for receives. new_representative is set by genesis and
    representative-change blocks. The antispam nonce is a small PoW attached
    to every block; it is not covered by the signature.
    """

    account: str
    predecessor: bytes  # zero digest on the first block of a chain
    kind: BlockKind
    amount: int
    counterparty: object  # str (send) | bytes (receive) | None
    new_representative: Optional[str]
    antispam_nonce: int
    signature: Signature

    def _payload(self) -> bytes:
        k = self.kind
        if k is BlockKind.GENESIS:
            return codec.enc_u64(self.amount) + codec.enc_str(self.new_representative)
        if k is BlockKind.SEND:
            return codec.enc_u64(self.amount) + codec.enc_str(self.counterparty)
        if k is BlockKind.RECEIVE:
            return codec.enc_u64(self.amount) + codec.enc_digest(self.counterparty)
        return codec.enc_str(self.new_representative)

    def signing_payload(self) -> bytes:
        return (codec.enc_str(self.account) + codec.enc_digest(self.predecessor)
                + codec.enc_u8(self.kind.value) + self._payload())

    def signing_digest(self) -> bytes:
        return digest(self.signing_payload())

    def encode(self) -> bytes:
        return (self.signing_payload() + codec.enc_u64(self.antispam_nonce)
                + self.signature.encode())

    @classmethod
    def decode(cls, r: Reader) -> "LatticeBlock":
        account = r.str_()
        predecessor = r.digest()
        kind = BlockKind(r.u8())
        if kind is BlockKind.GENESIS:
            amount, counterparty, new_rep = r.u64(), None, r.str_()
        elif kind is BlockKind.SEND:
            amount, counterparty, new_rep = r.u64(), r.str_(), None
        elif kind is BlockKind.RECEIVE:
            amount, counterparty, new_rep = r.u64(), r.digest(), None
        else:
            amount, counterparty, new_rep = 0, None, r.str_()
        return cls(account=account, predecessor=predecessor, kind=kind,
                   amount=amount, counterparty=counterparty,
                   new_representative=new_rep,
                   antispam_nonce=r.u64(), signature=Signature.decode(r))

    def digest(self) -> bytes:
        return digest(self.encode())

    def verify_signature(self) -> bool:
        return verify(self.signature, self.account, self.signing_digest())


def build_block(identity: Identity, predecessor: bytes, kind: BlockKind,
                amount: int = 0, counterparty: object = None,
                new_representative: Optional[str] = None, spam_bits: int = 0,
                counter: WorkCounter | None = None) -> LatticeBlock:
    """Sign and spam-stamp a block for the given identity."""
    unsigned = LatticeBlock(
        account=identity.id, predecessor=predecessor, kind=kind, amount=amount,
        counterparty=counterparty, new_representative=new_representative,
        antispam_nonce=0,
        signature=Signature(identity.id, ZERO_DIGEST, ZERO_DIGEST))
    sd = unsigned.signing_digest()
    nonce = antispam_pow(sd, spam_bits, counter) if spam_bits > 0 else 0
    return replace(unsigned, antispam_nonce=nonce, signature=sign(identity, sd))


@dataclass(frozen=True)
class PendingSend:
    """A settled send waiting for its receive."""

    send_digest: bytes
    recipient: str
    amount: int

    def encode(self) -> bytes:
        return (codec.enc_digest(self.send_digest) + codec.enc_str(self.recipient)
                + codec.enc_u64(self.amount))


@dataclass(frozen=True)
class VoteRecord:
    """A representative's endorsement of one successor for a disputed slot."""

    representative: str
    subject: bytes  # the disputed predecessor digest
    choice: bytes   # the endorsed successor block digest
    weight: int     # voter's delegated weight at emission time
    signature: Signature

    def signing_payload(self) -> bytes:
        return (codec.enc_str(self.representative) + codec.enc_digest(self.subject)
                + codec.enc_digest(self.choice) + codec.enc_u64(self.weight))

    def signing_digest(self) -> bytes:
        return digest(self.signing_payload())

    def encode(self) -> bytes:
        return self.signing_payload() + self.signature.encode()

    @classmethod
    def decode(cls, r: Reader) -> "VoteRecord":
        return cls(representative=r.str_(), subject=r.digest(), choice=r.digest(),
                   weight=r.u64(), signature=Signature.decode(r))

    def verify_signature(self) -> bool:
        return verify(self.signature, self.representative, self.signing_digest())


def make_vote(identity: Identity, subject: bytes, choice: bytes, weight: int) -> VoteRecord:
    unsigned = VoteRecord(representative=identity.id, subject=subject,
                          choice=choice, weight=weight,
                          signature=Signature(identity.id, ZERO_DIGEST, ZERO_DIGEST))
    return replace(unsigned, signature=sign(identity, unsigned.signing_digest()))


# ---------------------------------------------------------------------------
# Verdicts and outcomes

class LatticeVerdict(enum.Enum):
    ACCEPT = "accept"
    BAD_SIGNATURE = "bad-signature"
    BAD_POW = "bad-pow"
    FORK_DETECTED = "fork-detected"
    GAP_DETECTED = "gap-detected"
    INSUFFICIENT_BALANCE = "insufficient-balance"
    DUPLICATE_RECEIVE = "duplicate-receive"


class OutcomeStatus(enum.Enum):
    APPLIED = "applied"
    PARKED = "parked"
    CONFLICT = "conflict"
    REJECTED = "rejected"
    DUPLICATE = "duplicate"


@dataclass
class Resolution:
    account: str
    subject: bytes
    winner: bytes
    discarded: tuple[bytes, ...]
    winner_applied: bool


@dataclass
class Outcome:
    status: OutcomeStatus = OutcomeStatus.REJECTED
    verdict: LatticeVerdict = LatticeVerdict.ACCEPT
    detail: str = ""
    applied: list[LatticeBlock] = field(default_factory=list)
    conflicts_opened: list[tuple[str, bytes]] = field(default_factory=list)
    resolutions: list[Resolution] = field(default_factory=list)


@dataclass
class Conflict:
    account: str
    subject: bytes
    candidates: dict[bytes, LatticeBlock]
    votes: dict[str, VoteRecord]  # one choice per representative
    opened_at: float
    resolved: Optional[bytes] = None
    tied: bool = False


def resolve_fork(candidates: Iterable[bytes], votes: Iterable[VoteRecord],
                 total_delegated_weight: int,
                 quorum_fraction: float = DEFAULT_QUORUM_FRACTION,
                 ) -> tuple[Optional[bytes], dict[bytes, int], bool]:
    """Tally votes over conflicting candidates.

    Returns (winner, tallies, tied). The winner must hold strictly the
    greatest summed weight AND more than quorum_fraction of all delegated
    weight; otherwise the conflict stays undecided (winner None). An exact
    tie at the top is reported through the tied flag.
    """
    tallies: dict[bytes, int] = {c: 0 for c in candidates}
    for v in votes:
        if v.choice in tallies:
            tallies[v.choice] += v.weight
    threshold = quorum_fraction * total_delegated_weight
    best = max(tallies.values(), default=0)
    leaders = [c for c, w in sorted(tallies.items()) if w == best and w > 0]
    tied = len(leaders) > 1
    if tied or not leaders:
        return None, tallies, tied
    if best <= threshold:
        return None, tallies, False
    return leaders[0], tallies, False


# ---------------------------------------------------------------------------
# Per-account chain

@dataclass
class AccountChain:
    account: str
    representative: str
    balance: int = 0
    head: bytes = ZERO_DIGEST
    blocks: dict[bytes, LatticeBlock] = field(default_factory=dict)
    order: list[bytes] = field(default_factory=list)
    known: set[bytes] = field(default_factory=set)

    def successor_of(self, predecessor: bytes) -> Optional[bytes]:
        """Digest of the on-chain block sitting directly after `predecessor`."""
        if predecessor == ZERO_DIGEST:
            return self.order[0] if self.order else None
        try:
            i = self.order.index(predecessor)
        except ValueError:
            return None
        return self.order[i + 1] if i + 1 < len(self.order) else None


@dataclass
class ParkedBlock:
    block: LatticeBlock
    missing: bytes  # digest that must appear before retry


@dataclass(frozen=True)
class LatticePruneReport:
    pruned_accounts: tuple[str, ...]
    skipped_accounts: tuple[str, ...]
    bytes_before: int
    bytes_after: int


# ---------------------------------------------------------------------------
# The ledger (one node's view)

class LatticeLedger:
    """Everything one node believes about the lattice."""

    def __init__(self, genesis: dict[str, tuple[int, str]],
                 spam_bits: int = 0,
                 quorum_fraction: float = DEFAULT_QUORUM_FRACTION,
                 cement_delay_s: Optional[float] = None,
                 gap_buffer: int = DEFAULT_GAP_BUFFER,
                 tier: NodeTier = NodeTier.HISTORICAL):
        self.spam_bits = spam_bits
        self.quorum_fraction = quorum_fraction
        self.cement_delay_s = cement_delay_s
        self.gap_buffer = gap_buffer
        self.tier = tier

        self.accounts: dict[str, AccountChain] = {}
        self.pending: dict[bytes, PendingSend] = {}
        self.settled_of: dict[bytes, tuple[str, bytes]] = {}  # send -> (recipient, receive)
        self.adoption_time: dict[bytes, float] = {}
        self.seen: set[bytes] = set()

        self.conflicts: dict[tuple[str, bytes], Conflict] = {}
        self.resolved_winners: dict[tuple[str, bytes], bytes] = {}
        self.flagged_ties: list[tuple[str, bytes]] = []
        self.votes_by_choice: dict[bytes, dict[str, VoteRecord]] = {}
        self.rep_subject_choice: dict[tuple[str, bytes], bytes] = {}

        self.parked: "OrderedDict[bytes, ParkedBlock]" = OrderedDict()
        self.parked_by_missing: dict[bytes, list[bytes]] = {}

        self.rep_weight: dict[str, int] = {}
        self.total_balance = 0
        self.total_pending = 0
        self._bytes_blocks = 0
        self._bytes_pending = 0
        self._enc_len: dict[bytes, int] = {}

        # genesis: every account opens its chain with a signed allocation block
        for account in sorted(genesis):
            amount, representative = genesis[account]
            block = build_block(identity_for(account), ZERO_DIGEST,
                                BlockKind.GENESIS, amount=amount,
                                new_representative=representative,
                                spam_bits=spam_bits)
            chain = AccountChain(account=account, representative=representative)
            self.accounts[account] = chain
            self._apply(block, now=0.0)
        self.genesis_supply = self.total_balance

    # -- queries ------------------------------------------------------------

    def balance(self, account: str) -> int:
        chain = self.accounts.get(account)
        return chain.balance if chain else 0

    def head(self, account: str) -> bytes:
        return self.accounts[account].head

    def representative_weight(self, representative: str) -> int:
        """Sum of settled balances delegated to this representative."""
        return self.rep_weight.get(representative, 0)

    def recompute_weights(self) -> dict[str, int]:
        """Full-scan oracle for the incrementally tracked weights."""
        out: dict[str, int] = {}
        for account in sorted(self.accounts):
            chain = self.accounts[account]
            out[chain.representative] = out.get(chain.representative, 0) + chain.balance
        return {r: w for r, w in out.items() if w != 0}

    def total_delegated_weight(self) -> int:
        return self.total_balance

    def open_conflicts(self) -> list[tuple[str, bytes]]:
        return sorted(k for k, c in self.conflicts.items() if c.resolved is None)

    # -- conservation -------------------------------------------------------

    def check_conservation(self) -> None:
        if self.total_balance + self.total_pending != self.genesis_supply:
            raise InvariantViolation(
                "lattice balance conservation",
                f"settled {self.total_balance} + pending {self.total_pending}"
                f" != genesis {self.genesis_supply}")

    def audit_totals(self) -> tuple[int, int]:
        """Recompute settled/pending sums from scratch."""
        settled = sum(c.balance for c in self.accounts.values())
        pend = sum(p.amount for p in self.pending.values())
        return settled, pend

    # -- block creation -----------------------------------------------------

    def create_send(self, account: str, recipient: str, amount: int,
                    head: Optional[bytes] = None,
                    counter: WorkCounter | None = None) -> LatticeBlock:
        chain = self._chain(account)
        if head is not None and head != chain.head:
            raise StalePredecessorError(f"head of {account} moved")
        if amount <= 0:
            raise InvalidAmountError(f"send amount {amount} is not positive")
        if amount > chain.balance:
            raise InsufficientBalanceError(
                f"{account} holds {chain.balance}, cannot send {amount}")
        if recipient not in self.accounts:
            raise NotFoundError(f"unknown recipient {recipient}")
        return build_block(identity_for(account), chain.head, BlockKind.SEND,
                           amount=amount, counterparty=recipient,
                           spam_bits=self.spam_bits, counter=counter)

    def create_receive(self, account: str, send_digest: bytes,
                       counter: WorkCounter | None = None) -> LatticeBlock:
        chain = self._chain(account)
        pend = self.pending.get(send_digest)
        if pend is None:
            if send_digest in self.settled_of:
                raise DuplicateReceiveError("send already received")
            raise NotFoundError("no matching pending send")
        if pend.recipient != account:
            raise NotFoundError(f"pending send addressed to {pend.recipient}")
        return build_block(identity_for(account), chain.head, BlockKind.RECEIVE,
                           amount=pend.amount, counterparty=send_digest,
                           spam_bits=self.spam_bits, counter=counter)

    def create_rep_change(self, account: str, new_representative: str,
                          counter: WorkCounter | None = None) -> LatticeBlock:
        chain = self._chain(account)
        if new_representative not in self.accounts:
            raise NotFoundError(f"unknown representative {new_representative}")
        return build_block(identity_for(account), chain.head, BlockKind.REP_CHANGE,
                           new_representative=new_representative,
                           spam_bits=self.spam_bits, counter=counter)

    def _chain(self, account: str) -> AccountChain:
        chain = self.accounts.get(account)
        if chain is None:
            raise NotFoundError(f"unknown account {account}")
        return chain

    # -- validation ---------------------------------------------------------

    def validate_block(self, block: LatticeBlock,
                       now: float = 0.0) -> tuple[LatticeVerdict, str]:
        if not block.verify_signature():
            return LatticeVerdict.BAD_SIGNATURE, f"bad signature from {block.account}"
        if self.spam_bits > 0 and not check_pow(
                block.signing_digest(), block.antispam_nonce, self.spam_bits):
            return LatticeVerdict.BAD_POW, "antispam work below difficulty"

        chain = self.accounts.get(block.account)
        if chain is None:
            return LatticeVerdict.GAP_DETECTED, f"unknown account {block.account}"
        if block.kind is BlockKind.GENESIS:
            # chains are opened at construction; a second first-block is a fork
            return LatticeVerdict.FORK_DETECTED, "genesis slot is fixed"

        if block.predecessor != chain.head:
            if block.predecessor in chain.known:
                return LatticeVerdict.FORK_DETECTED, "predecessor already has a successor"
            return LatticeVerdict.GAP_DETECTED, "predecessor not held"

        if block.kind is BlockKind.SEND:
            if block.amount <= 0:
                return LatticeVerdict.INSUFFICIENT_BALANCE, "non-positive amount"
            if block.amount > chain.balance:
                return LatticeVerdict.INSUFFICIENT_BALANCE, (
                    f"{block.account} holds {chain.balance}, sends {block.amount}")
            if block.counterparty not in self.accounts:
                return LatticeVerdict.GAP_DETECTED, "unknown recipient"
        elif block.kind is BlockKind.RECEIVE:
            pend = self.pending.get(block.counterparty)
            if pend is None:
                if block.counterparty in self.settled_of:
                    return LatticeVerdict.DUPLICATE_RECEIVE, "send already received"
                return LatticeVerdict.GAP_DETECTED, "matched send not held"
            if pend.recipient != block.account:
                return LatticeVerdict.GAP_DETECTED, "no matching pending send for this account"
            if pend.amount != block.amount:
                return LatticeVerdict.INSUFFICIENT_BALANCE, "amount mismatch with pending send"
        else:  # REP_CHANGE
            if block.new_representative not in self.accounts:
                return LatticeVerdict.GAP_DETECTED, "unknown representative"
        return LatticeVerdict.ACCEPT, ""

    # -- cementing ----------------------------------------------------------

    def cement_eligible(self, block_digest: bytes, now: float) -> bool:
        """True when the block is settled and conflict-free past the delay.

        Cementing is an opt-in switch: with no delay configured it always
        reports False and conflicts fall through to voting.
        """
        if self.cement_delay_s is None:
            return False
        adopted = self.adoption_time.get(block_digest)
        if adopted is None or now - adopted < self.cement_delay_s:
            return False
        block = self._find_block(block_digest)
        if block is None:
            return False
        key = (block.account, block.predecessor)
        open_conflict = self.conflicts.get(key)
        if open_conflict is not None and open_conflict.resolved is None:
            return False
        if block.kind is BlockKind.SEND and block.digest() not in self.settled_of:
            return False
        return True

    def _find_block(self, block_digest: bytes) -> Optional[LatticeBlock]:
        for account in self.accounts.values():
            blk = account.blocks.get(block_digest)
            if blk is not None:
                return blk
        return None

    # -- the single entry point for blocks off the wire ---------------------

    def receive_block(self, block: LatticeBlock, now: float,
                      votes: Iterable[VoteRecord] = ()) -> Outcome:
        outcome = Outcome()
        for v in votes:
            self._record_vote(v, now, outcome)
        queue = [block]
        first = True
        while queue:
            blk = queue.pop(0)
            unparked = self._process(blk, now, outcome, record_status=first)
            first = False
            queue.extend(unparked)
        self.check_conservation()
        return outcome

    def add_vote(self, vote: VoteRecord, now: float) -> Outcome:
        outcome = Outcome()
        self._record_vote(vote, now, outcome)
        self.check_conservation()
        return outcome

    # -- internals ----------------------------------------------------------

    def _process(self, block: LatticeBlock, now: float, outcome: Outcome,
                 record_status: bool) -> list[LatticeBlock]:
        d = block.digest()
        if d in self.seen:
            if record_status:
                outcome.status = OutcomeStatus.DUPLICATE
            return []

        key = (block.account, block.predecessor)
        winner = self.resolved_winners.get(key)
        if winner is not None and d != winner:
            self.seen.add(d)
            if record_status:
                outcome.status = OutcomeStatus.REJECTED
                outcome.verdict = LatticeVerdict.FORK_DETECTED
                outcome.detail = "conflict already resolved against this block"
            return []

        verdict, detail = self.validate_block(block, now)

        if verdict is LatticeVerdict.ACCEPT:
            self.seen.add(d)
            self._apply(block, now)
            outcome.applied.append(block)
            if record_status:
                outcome.status = OutcomeStatus.APPLIED
            return self._release_parked(d)

        if verdict is LatticeVerdict.FORK_DETECTED and block.kind is not BlockKind.GENESIS:
            self.seen.add(d)
            chain = self.accounts[block.account]
            incumbent = chain.successor_of(block.predecessor)
            if incumbent is not None and self.cement_eligible(incumbent, now):
                if record_status:
                    outcome.status = OutcomeStatus.REJECTED
                    outcome.verdict = verdict
                    outcome.detail = "incumbent block is cemented"
                return []
            self._open_conflict(block, incumbent, now, outcome)
            if record_status:
                outcome.status = OutcomeStatus.CONFLICT
                outcome.verdict = verdict
                outcome.detail = detail
            released: list[LatticeBlock] = []
            self._try_resolve(key, now, outcome, released)
            return released

        if verdict is LatticeVerdict.GAP_DETECTED and self._parkable(detail):
            self.seen.add(d)
            missing = block.predecessor
            if block.kind is BlockKind.RECEIVE and detail == "matched send not held":
                missing = block.counterparty
            self._park(d, block, missing)
            if record_status:
                outcome.status = OutcomeStatus.PARKED
                outcome.verdict = verdict
                outcome.detail = detail
            return []

        self.seen.add(d)
        if record_status:
            outcome.status = OutcomeStatus.REJECTED
            outcome.verdict = verdict
            outcome.detail = detail
        return []

    @staticmethod
    def _parkable(detail: str) -> bool:
        # only genuinely-missing context is worth waiting for
        return detail in ("predecessor not held", "matched send not held",
                          "unknown account")

    def _park(self, d: bytes, block: LatticeBlock, missing: bytes) -> None:
        self.parked[d] = ParkedBlock(block=block, missing=missing)
        self.parked_by_missing.setdefault(missing, []).append(d)
        while len(self.parked) > self.gap_buffer:
            evicted_digest, evicted = self.parked.popitem(last=False)
            waiting = self.parked_by_missing.get(evicted.missing, [])
            if evicted_digest in waiting:
                waiting.remove(evicted_digest)
                if not waiting:
                    self.parked_by_missing.pop(evicted.missing, None)

    def _release_parked(self, arrived: bytes) -> list[LatticeBlock]:
        digests = self.parked_by_missing.pop(arrived, [])
        released = []
        for d in digests:
            parked = self.parked.pop(d, None)
            if parked is not None:
                self.seen.discard(d)  # allow a fresh pass
                released.append(parked.block)
        return released

    def _record_vote(self, vote: VoteRecord, now: float, outcome: Outcome) -> None:
        if not vote.verify_signature():
            return
        prior = self.rep_subject_choice.get((vote.representative, vote.subject))
        if prior is not None and prior != vote.choice:
            return  # one choice per (representative, subject); first stands
        self.rep_subject_choice[(vote.representative, vote.subject)] = vote.choice
        self.votes_by_choice.setdefault(vote.choice, {})[vote.representative] = vote

        for key in list(self.conflicts):
            conflict = self.conflicts[key]
            if conflict.resolved is None and vote.choice in conflict.candidates \
                    and vote.representative not in conflict.votes:
                conflict.votes[vote.representative] = vote
                released: list[LatticeBlock] = []
                self._try_resolve(key, now, outcome, released)
                while released:
                    blk = released.pop(0)
                    released.extend(
                        self._process(blk, now, outcome, record_status=False))

    def _open_conflict(self, newcomer: LatticeBlock, incumbent_digest: Optional[bytes],
                       now: float, outcome: Outcome) -> None:
        key = (newcomer.account, newcomer.predecessor)
        conflict = self.conflicts.get(key)
        if conflict is None:
            conflict = Conflict(account=newcomer.account, subject=newcomer.predecessor,
                                candidates={}, votes={}, opened_at=now)
            self.conflicts[key] = conflict
            outcome.conflicts_opened.append(key)
        if incumbent_digest is not None and incumbent_digest not in conflict.candidates:
            chain = self.accounts[newcomer.account]
            conflict.candidates[incumbent_digest] = chain.blocks.get(incumbent_digest)
        conflict.candidates[newcomer.digest()] = newcomer
        # pull in any votes that arrived ahead of the conflict
        for cand in sorted(conflict.candidates):
            for rep, vote in sorted(self.votes_by_choice.get(cand, {}).items()):
                if rep not in conflict.votes:
                    conflict.votes[rep] = vote

    def _try_resolve(self, key: tuple[str, bytes], now: float, outcome: Outcome,
                     released: list[LatticeBlock]) -> None:
        conflict = self.conflicts.get(key)
        if conflict is None or conflict.resolved is not None:
            return
        winner, tallies, tied = resolve_fork(
            sorted(conflict.candidates), conflict.votes.values(),
            self.total_delegated_weight(), self.quorum_fraction)
        if tied and key not in self.flagged_ties:
            self.flagged_ties.append(key)
        if winner is None:
            return

        account, subject = key
        chain = self.accounts[account]
        incumbent = chain.successor_of(subject)
        discarded: tuple[bytes, ...] = ()
        winner_applied = True
        if incumbent == winner:
            pass  # the chain already carries the winner
        else:
            if incumbent is not None:
                discarded = tuple(self._undo_to(account, subject))
            winner_block = conflict.candidates.get(winner)
            verdict, _ = self.validate_block(winner_block, now)
            if verdict is LatticeVerdict.ACCEPT:
                self._apply(winner_block, now)
                outcome.applied.append(winner_block)
                released.extend(self._release_parked(winner))
            else:
                winner_applied = False  # degenerate: winner no longer applies
        conflict.resolved = winner
        self.resolved_winners[key] = winner
        outcome.resolutions.append(Resolution(
            account=account, subject=subject, winner=winner,
            discarded=discarded, winner_applied=winner_applied))

    # -- state transitions --------------------------------------------------

    def _adjust_balance(self, chain: AccountChain, delta: int) -> None:
        nb = chain.balance + delta
        if nb < 0:
            raise InvariantViolation("non-negative balances",
                                     f"{chain.account} would hold {nb}")
        chain.balance = nb
        rep = chain.representative
        self.rep_weight[rep] = self.rep_weight.get(rep, 0) + delta
        if self.rep_weight[rep] == 0:
            del self.rep_weight[rep]
        self.total_balance += delta

    def _apply(self, block: LatticeBlock, now: float) -> None:
        d = block.digest()
        chain = self.accounts[block.account]
        kind = block.kind
        if kind is BlockKind.GENESIS:
            chain.representative = block.new_representative
            self._adjust_balance(chain, block.amount)
        elif kind is BlockKind.SEND:
            self._adjust_balance(chain, -block.amount)
            self.pending[d] = PendingSend(send_digest=d, recipient=block.counterparty,
                                          amount=block.amount)
            self.total_pending += block.amount
            self._bytes_pending += len(self.pending[d].encode())
        elif kind is BlockKind.RECEIVE:
            pend = self.pending.pop(block.counterparty)
            self.total_pending -= pend.amount
            self._bytes_pending -= len(pend.encode())
            self._adjust_balance(chain, pend.amount)
            self.settled_of[block.counterparty] = (block.account, d)
        else:  # REP_CHANGE
            old = chain.representative
            if chain.balance:
                self.rep_weight[old] = self.rep_weight.get(old, 0) - chain.balance
                if self.rep_weight[old] == 0:
                    del self.rep_weight[old]
                new = block.new_representative
                self.rep_weight[new] = self.rep_weight.get(new, 0) + chain.balance
            chain.representative = block.new_representative

        prev_head = chain.head
        chain.blocks[d] = block
        chain.order.append(d)
        chain.known.add(d)
        chain.head = d
        self.adoption_time[d] = now
        enc_len = len(block.encode())
        self._enc_len[d] = enc_len
        self._bytes_blocks += enc_len

        if self.tier is NodeTier.CURRENT and prev_head != ZERO_DIGEST:
            dropped = chain.blocks.pop(prev_head, None)
            if dropped is not None:
                self._bytes_blocks -= self._enc_len.get(prev_head, 0)

    def _undo_to(self, account: str, target: bytes) -> list[bytes]:
        """Roll an account chain back to `target`, cascading through settlements."""
        chain = self.accounts[account]
        discarded: list[bytes] = []
        while chain.head != target:
            d = chain.head
            block = chain.blocks.get(d)
            if block is None:
                raise InvariantViolation(
                    "rollback needs block bodies",
                    f"{account} pruned below an unresolved conflict")
            kind = block.kind
            if kind is BlockKind.GENESIS:
                raise InvariantViolation("genesis is immutable",
                                         f"rollback hit genesis of {account}")
            if kind is BlockKind.SEND:
                settled = self.settled_of.get(d)
                if settled is not None:
                    recipient, receive_digest = settled
                    rchain = self.accounts[recipient]
                    rblock = rchain.blocks.get(receive_digest)
                    if rblock is None:
                        raise InvariantViolation(
                            "rollback needs block bodies",
                            f"{recipient} pruned below a cascading rollback")
                    discarded.extend(self._undo_to(recipient, rblock.predecessor))
                pend = self.pending.pop(d)
                self.total_pending -= pend.amount
                self._bytes_pending -= len(pend.encode())
                self._adjust_balance(chain, block.amount)
            elif kind is BlockKind.RECEIVE:
                send_digest = block.counterparty
                self.settled_of.pop(send_digest, None)
                self._adjust_balance(chain, -block.amount)
                pend = PendingSend(send_digest=send_digest, recipient=account,
                                   amount=block.amount)
                self.pending[send_digest] = pend
                self.total_pending += block.amount
                self._bytes_pending += len(pend.encode())
            else:  # REP_CHANGE: restore whatever the chain named before
                prior = self._representative_before(chain, d)
                new = chain.representative
                if chain.balance:
                    self.rep_weight[new] = self.rep_weight.get(new, 0) - chain.balance
                    if self.rep_weight[new] == 0:
                        del self.rep_weight[new]
                    self.rep_weight[prior] = self.rep_weight.get(prior, 0) + chain.balance
                chain.representative = prior

            chain.order.pop()
            chain.blocks.pop(d, None)
            chain.known.discard(d)
            self.adoption_time.pop(d, None)
            self._bytes_blocks -= self._enc_len.pop(d, 0)
            chain.head = block.predecessor
            discarded.append(d)
        return discarded

    def _representative_before(self, chain: AccountChain, block_digest: bytes) -> str:
        i = chain.order.index(block_digest)
        for d in reversed(chain.order[:i]):
            blk = chain.blocks.get(d)
            if blk is None:
                raise InvariantViolation("rollback needs block bodies",
                                         f"{chain.account} pruned mid-history")
            if blk.kind in (BlockKind.GENESIS, BlockKind.REP_CHANGE):
                return blk.new_representative
        raise InvariantViolation("chain must start at genesis", chain.account)

    # -- pruning and tiers --------------------------------------------------

    def prune_to_current(self) -> LatticePruneReport:
        """Reduce every undisputed chain to its head block (plus the digest
        index that keeps fork-vs-gap verdicts identical to an archive node)."""
        before = self._bytes_blocks + self._bytes_pending
        open_accounts = {k[0] for k, c in self.conflicts.items() if c.resolved is None}
        pruned, skipped = [], []
        for account in sorted(self.accounts):
            if account in open_accounts:
                skipped.append(account)
                continue
            chain = self.accounts[account]
            for d in list(chain.blocks):
                if d != chain.head:
                    chain.blocks.pop(d)
                    self._bytes_blocks -= self._enc_len.pop(d, 0)
            pruned.append(account)
        if not skipped:
            self.tier = NodeTier.CURRENT
        return LatticePruneReport(tuple(pruned), tuple(skipped), before,
                                  self._bytes_blocks + self._bytes_pending)

    # -- size accounting ----------------------------------------------------

    def ledger_bytes(self) -> dict[str, int]:
        index_digests = sum(len(c.known) for c in self.accounts.values())
        bodies = sum(len(c.blocks) for c in self.accounts.values())
        index_only = index_digests - bodies
        return {
            "lattice_blocks": self._bytes_blocks + 32 * index_only,
            "lattice_pending": self._bytes_pending,
        }

    def recount_bytes(self) -> dict[str, int]:
        blocks = sum(len(b.encode()) for c in self.accounts.values()
                     for b in c.blocks.values())
        index_only = sum(len(c.known) - len(c.blocks) for c in self.accounts.values())
        pend = sum(len(p.encode()) for p in self.pending.values())
        return {"lattice_blocks": blocks + 32 * index_only, "lattice_pending": pend}
