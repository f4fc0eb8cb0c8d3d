"""Account-balance blockchain with longest-chain adoption.

One global chain of blocks, each holding signed transactions. Design points:

* account/balance model with per-sender strictly increasing sequence numbers
  (replay protection); no UTXO set
* block capacity in abstract weight units, enforced at assembly
* two Merkle commitments per header: transaction root and state root
* per-block state deltas so state at any recent block can be reached by
  reversing/applying deltas from the materialized head state
* longest chain wins; equal length keeps the first-seen branch
* pruning drops bodies and deltas below a recency window, headers stay
* fast sync = all headers + state snapshot at a pivot + replay from the pivot

Proof checking is pluggable (grind PoW, lottery, or stake-based slots) so the
same store serves every consensus flavor.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from . import codec
from .codec import Reader
from .errors import ConfigError, LedgerError, NotFoundError
from .leader_election import DifficultySchedule, check_pow, pos_select, retarget
from .primitives import (
    ZERO_DIGEST,
    Identity,
    Signature,
    digest,
    merkle_root,
    sign,
    verify,
)

GENESIS_PRODUCER = "genesis"

# Pruning below this many recent blocks would undercut reorg safety.
MIN_KEEP_RECENT = 128

DEFAULT_FASTSYNC_PIVOT_OFFSET = 1024


class OrphanParentError(LedgerError):
    """Assembly was asked to build on a parent the store does not hold."""


class HistoryPrunedError(LedgerError):
    """The requested state/body lies below the pruned horizon."""


class SyncError(LedgerError):
    """Fast sync could not reproduce the source chain's state."""


# ---------------------------------------------------------------------------
# Transactions

@dataclass(frozen=True)
class ChainTransaction:
    sender: str
    recipient: str
    amount: int
    sequence: int
    weight: int
    signature: Signature

    def signing_payload(self) -> bytes:
        return (
            codec.enc_str(self.sender)
            + codec.enc_str(self.recipient)
            + codec.enc_u64(self.amount)
            + codec.enc_u64(self.sequence)
            + codec.enc_u64(self.weight)
        )

    def signing_digest(self) -> bytes:
        return digest(self.signing_payload())

    def encode(self) -> bytes:
        return self.signing_payload() + self.signature.encode()

    @classmethod
    def decode(cls, r: Reader) -> "ChainTransaction":
        return cls(
            sender=r.str_(),
            recipient=r.str_(),
            amount=r.u64(),
            sequence=r.u64(),
            weight=r.u64(),
            signature=Signature.decode(r),
        )

    def digest(self) -> bytes:
        return digest(self.encode())

    def verify_signature(self) -> bool:
        return verify(self.signature, self.sender, self.signing_digest())


def make_transaction(sender: Identity, recipient: str, amount: int,
                     sequence: int, weight: int) -> ChainTransaction:
    if amount <= 0:
        raise ValueError("transaction amount must be positive")
    if weight <= 0:
        raise ValueError("transaction weight must be positive")
    unsigned = ChainTransaction(
        sender=sender.id, recipient=recipient, amount=amount,
        sequence=sequence, weight=weight,
        signature=Signature(sender.id, ZERO_DIGEST, ZERO_DIGEST),
    )
    return replace(unsigned, signature=sign(sender, unsigned.signing_digest()))


# ---------------------------------------------------------------------------
# Blocks

@dataclass(frozen=True)
class BlockHeader:
    predecessor: bytes  # zero digest marks genesis
    tx_root: bytes
    state_root: bytes
    height: int
    timestamp: float
    nonce: int
    producer: str

    def encode(self) -> bytes:
        return (
            codec.enc_digest(self.predecessor)
            + codec.enc_digest(self.tx_root)
            + codec.enc_digest(self.state_root)
            + codec.enc_u64(self.height)
            + codec.enc_f64(self.timestamp)
            + codec.enc_u64(self.nonce)
            + codec.enc_str(self.producer)
        )

    @classmethod
    def decode(cls, r: Reader) -> "BlockHeader":
        return cls(
            predecessor=r.digest(), tx_root=r.digest(), state_root=r.digest(),
            height=r.u64(), timestamp=r.f64(), nonce=r.u64(), producer=r.str_(),
        )

    def digest(self) -> bytes:
        return digest(self.encode())

    def work_digest(self) -> bytes:
        # the grind puzzle runs over the header with its nonce field zeroed
        return digest(replace(self, nonce=0).encode())


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[ChainTransaction, ...]

    def encode(self) -> bytes:
        return self.header.encode() + codec.enc_list(
            self.transactions, lambda t: t.encode())

    @classmethod
    def decode(cls, r: Reader) -> "Block":
        header = BlockHeader.decode(r)
        txs = tuple(r.list_(ChainTransaction.decode))
        return cls(header=header, transactions=txs)

    def digest(self) -> bytes:
        return self.header.digest()


# ---------------------------------------------------------------------------
# State and deltas

@dataclass
class ChainState:
    """Balances plus per-account last-used sequence numbers."""

    balances: dict[str, int] = field(default_factory=dict)
    sequences: dict[str, int] = field(default_factory=dict)

    def copy(self) -> "ChainState":
        return ChainState(balances=dict(self.balances), sequences=dict(self.sequences))

    def root(self) -> bytes:
        leaves = [
            digest(codec.enc_str(a) + codec.enc_u64(self.balances[a])
                   + codec.enc_u64(self.sequences.get(a, 0)))
            for a in sorted(self.balances)
        ]
        return merkle_root(leaves)

    def balance(self, account: str) -> int:
        return self.balances.get(account, 0)

    def sequence(self, account: str) -> int:
        return self.sequences.get(account, 0)


@dataclass(frozen=True)
class AccountChange:
    balance_before: int
    balance_after: int
    sequence_before: int
    sequence_after: int
    existed_before: bool = True  # reverting a block must drop accounts it created

    def encode(self) -> bytes:
        return (codec.enc_u64(self.balance_before) + codec.enc_u64(self.balance_after)
                + codec.enc_u64(self.sequence_before) + codec.enc_u64(self.sequence_after)
                + codec.enc_u8(1 if self.existed_before else 0))


@dataclass(frozen=True)
class StateDelta:
    """Balance/sequence movement one block causes, keyed by its digest."""

    block: bytes
    changes: dict[str, AccountChange]

    def encode(self) -> bytes:
        items = sorted(self.changes.items())
        return codec.enc_digest(self.block) + codec.enc_list(
            items, lambda kv: codec.enc_str(kv[0]) + kv[1].encode())

    def apply(self, state: ChainState) -> None:
        for account, ch in self.changes.items():
            state.balances[account] = ch.balance_after
            state.sequences[account] = ch.sequence_after

    def revert(self, state: ChainState) -> None:
        for account, ch in self.changes.items():
            if ch.existed_before:
                state.balances[account] = ch.balance_before
                state.sequences[account] = ch.sequence_before
            else:
                state.balances.pop(account, None)
                state.sequences.pop(account, None)


# ---------------------------------------------------------------------------
# Validation

class Verdict(enum.Enum):
    ACCEPT = "accept"
    BAD_PROOF = "bad-proof"
    UNKNOWN_PARENT = "unknown-parent"
    BAD_ROOT = "bad-root"
    DOUBLE_SPEND = "double-spend"
    BAD_SIGNATURE = "bad-signature"
    BAD_SEQUENCE = "bad-sequence"


@dataclass
class ValidationResult:
    verdict: Verdict
    detail: str = ""
    delta: Optional[StateDelta] = None
    schedule: Optional[DifficultySchedule] = None

    @property
    def ok(self) -> bool:
        return self.verdict is Verdict.ACCEPT


class ProofRule:
    """Consensus-specific check that a header was legitimately produced."""

    def check(self, store: "ChainStore", block: Block) -> tuple[bool, str]:
        raise NotImplementedError


class LotteryProof(ProofRule):
    """Lottery mode: production was already gated by the hashpower draw."""

    def check(self, store: "ChainStore", block: Block) -> tuple[bool, str]:
        return True, ""


class GrindProof(ProofRule):
    """Literal PoW: nonce must clear the parent schedule's difficulty bits."""

    def check(self, store: "ChainStore", block: Block) -> tuple[bool, str]:
        parent = store.blocks[block.header.predecessor]
        bits = parent.schedule.difficulty_bits
        if check_pow(block.header.work_digest(), block.header.nonce, bits):
            return True, ""
        return False, f"nonce misses {bits} leading zero bits"


class PosProof(ProofRule):
    """Slot-based stake selection: producer must match the slot's draw."""

    def __init__(self, registry, run_seed: int, slot_interval_s: float):
        self.registry = registry
        self.run_seed = run_seed
        self.slot_interval_s = slot_interval_s

    def check(self, store: "ChainStore", block: Block) -> tuple[bool, str]:
        ts = block.header.timestamp
        slot = round(ts / self.slot_interval_s)
        if abs(slot * self.slot_interval_s - ts) > 1e-9:
            return False, "timestamp off the slot grid"
        expected = pos_select(self.registry, self.run_seed, slot)
        if block.header.producer != expected:
            return False, f"slot {slot} belongs to {expected}"
        return True, ""


# ---------------------------------------------------------------------------
# The store

@dataclass
class StoredBlock:
    header: BlockHeader
    transactions: Optional[tuple[ChainTransaction, ...]]
    schedule: DifficultySchedule  # difficulty applying to this block's children
    arrival: int

    @property
    def height(self) -> int:
        return self.header.height


@dataclass(frozen=True)
class AdoptionReport:
    old_head: bytes
    new_head: bytes
    old_height: int
    new_height: int
    orphaned: tuple[bytes, ...]          # digests leaving the adopted branch
    reorged_in: tuple[bytes, ...]        # digests joining it (ancestor -> head order)
    returned_transactions: tuple[ChainTransaction, ...]
    duplicate: bool = False

    @property
    def head_moved(self) -> bool:
        return self.new_head != self.old_head


@dataclass(frozen=True)
class PruneReport:
    cutoff_height: int
    bodies_dropped: int
    deltas_dropped: int
    bytes_before: int
    bytes_after: int


class ChainStore:
    """All blocks a node holds, plus the adopted branch and its state."""

    def __init__(self, genesis_allocation: dict[str, int], block_reward: int,
                 proof_rule: ProofRule | None = None,
                 schedule: DifficultySchedule | None = None,
                 reorg_safety: int = MIN_KEEP_RECENT):
        self.block_reward = block_reward
        self.proof_rule = proof_rule or LotteryProof()
        self.reorg_safety = reorg_safety
        self.genesis_allocation = dict(genesis_allocation)
        self.genesis_supply = sum(genesis_allocation.values())
        if schedule is None:
            schedule = DifficultySchedule(
                target_interval_s=1.0, retarget_window=16, difficulty=1.0)

        genesis_state = ChainState(
            balances=dict(sorted(genesis_allocation.items())),
            sequences={a: 0 for a in sorted(genesis_allocation)},
        )
        header = BlockHeader(
            predecessor=ZERO_DIGEST, tx_root=merkle_root([]),
            state_root=genesis_state.root(), height=0, timestamp=0.0,
            nonce=0, producer=GENESIS_PRODUCER,
        )
        self.genesis_digest = header.digest()

        self._arrival = 0
        self.blocks: dict[bytes, StoredBlock] = {
            self.genesis_digest: StoredBlock(header, (), schedule, 0)
        }
        self.children: dict[bytes, list[bytes]] = {self.genesis_digest: []}
        self.deltas: dict[bytes, StateDelta] = {}
        self.tx_blocks: dict[bytes, list[bytes]] = {}
        self.adopted: dict[bytes, int] = {self.genesis_digest: 0}
        self.adopted_head = self.genesis_digest
        self.head_state = genesis_state.copy()
        self.first_full_block_height = 0

        self._bytes = {
            "chain_headers": len(header.encode()),
            "chain_bodies": len(codec.enc_list((), lambda t: t.encode())),
            "chain_deltas": 0,
        }

    # -- basic queries ------------------------------------------------------

    @property
    def head_height(self) -> int:
        return self.blocks[self.adopted_head].height

    def tips(self) -> list[bytes]:
        return sorted(d for d, kids in self.children.items() if not kids)

    def balance(self, account: str) -> int:
        return self.head_state.balance(account)

    def adopted_chain(self) -> list[bytes]:
        """Digests of the adopted branch, genesis first."""
        out = []
        d = self.adopted_head
        while True:
            out.append(d)
            header = self.blocks[d].header
            if header.predecessor == ZERO_DIGEST:
                break
            d = header.predecessor
        out.reverse()
        return out

    def reconstruct_block(self, block_digest: bytes) -> Block:
        sb = self.blocks[block_digest]
        if sb.transactions is None:
            raise HistoryPrunedError(f"body pruned at height {sb.height}")
        return Block(header=sb.header, transactions=sb.transactions)

    def ancestor_at(self, block_digest: bytes, height: int) -> bytes:
        d = block_digest
        while self.blocks[d].height > height:
            d = self.blocks[d].header.predecessor
        if self.blocks[d].height != height:
            raise NotFoundError("no ancestor at that height")
        return d

    # -- state reconstruction ----------------------------------------------

    def state_at(self, block_digest: bytes) -> ChainState:
        """Materialize state as of a block by walking deltas from the head."""
        if block_digest == self.adopted_head:
            return self.head_state.copy()
        if block_digest not in self.blocks:
            raise NotFoundError("unknown block")
        state = self.head_state.copy()
        # path from target up to the adopted branch
        up: list[bytes] = []
        d = block_digest
        while d not in self.adopted:
            up.append(d)
            d = self.blocks[d].header.predecessor
        join = d
        # rewind the adopted branch down to the join point
        d = self.adopted_head
        while d != join:
            delta = self.deltas.get(d)
            if delta is None:
                raise HistoryPrunedError("state below the pruned horizon")
            delta.revert(state)
            d = self.blocks[d].header.predecessor
        # replay the side branch
        for d in reversed(up):
            delta = self.deltas.get(d)
            if delta is None:
                raise HistoryPrunedError("state below the pruned horizon")
            delta.apply(state)
        return state

    # -- validation ---------------------------------------------------------

    def _child_schedule(self, block: Block, parent: StoredBlock) -> DifficultySchedule:
        sched = parent.schedule
        h = block.header.height
        if h > 0 and h % sched.retarget_window == 0 and h >= sched.retarget_window:
            window_start = self.ancestor_at(
                block.header.predecessor, h - sched.retarget_window)
            observed = block.header.timestamp - self.blocks[window_start].header.timestamp
            observed = max(observed, 1e-9)
            sched = retarget(sched, observed)
        return sched

    def validate_block(self, block: Block,
                       proof: ProofRule | None = None) -> ValidationResult:
        header = block.header
        parent = self.blocks.get(header.predecessor)
        if parent is None:
            return ValidationResult(Verdict.UNKNOWN_PARENT, "parent not held")
        if header.height != parent.height + 1:
            return ValidationResult(
                Verdict.UNKNOWN_PARENT,
                f"height {header.height} does not follow parent at {parent.height}")

        ok, why = (proof or self.proof_rule).check(self, block)
        if not ok:
            return ValidationResult(Verdict.BAD_PROOF, why)

        tx_digests = [t.digest() for t in block.transactions]
        if merkle_root(tx_digests) != header.tx_root:
            return ValidationResult(Verdict.BAD_ROOT, "transaction root mismatch")

        for tx in block.transactions:
            if not tx.verify_signature():
                return ValidationResult(
                    Verdict.BAD_SIGNATURE, f"bad signature from {tx.sender}")

        state = self.state_at(header.predecessor)
        changes: dict[str, AccountChange] = {}

        def touch(account: str) -> None:
            if account not in changes:
                changes[account] = AccountChange(
                    state.balance(account), 0, state.sequence(account), 0,
                    existed_before=account in state.balances)

        for tx in block.transactions:
            if tx.amount <= 0:
                return ValidationResult(Verdict.DOUBLE_SPEND, "non-positive amount")
            if tx.sequence <= state.sequence(tx.sender):
                return ValidationResult(
                    Verdict.BAD_SEQUENCE,
                    f"{tx.sender} reused sequence {tx.sequence}")
            if state.balance(tx.sender) < tx.amount:
                return ValidationResult(
                    Verdict.DOUBLE_SPEND,
                    f"{tx.sender} overspends by {tx.amount - state.balance(tx.sender)}")
            touch(tx.sender)
            touch(tx.recipient)
            state.balances[tx.sender] = state.balance(tx.sender) - tx.amount
            state.balances[tx.recipient] = state.balance(tx.recipient) + tx.amount
            state.sequences[tx.sender] = tx.sequence

        if self.block_reward:
            touch(header.producer)
            state.balances[header.producer] = state.balance(header.producer) + self.block_reward

        for account in changes:
            ch = changes[account]
            changes[account] = AccountChange(
                ch.balance_before, state.balance(account),
                ch.sequence_before, state.sequence(account),
                existed_before=ch.existed_before)

        if state.root() != header.state_root:
            return ValidationResult(Verdict.BAD_ROOT, "state root mismatch")

        block_digest = header.digest()
        return ValidationResult(
            Verdict.ACCEPT,
            delta=StateDelta(block=block_digest, changes=changes),
            schedule=self._child_schedule(block, parent),
        )

    # -- adoption -----------------------------------------------------------

    def adopt(self, block: Block, result: ValidationResult) -> AdoptionReport:
        """Store a validated block and move the head if its branch is longer."""
        d = block.digest()
        old_head = self.adopted_head
        old_height = self.head_height
        if d in self.blocks:
            return AdoptionReport(old_head, old_head, old_height, old_height,
                                  (), (), (), duplicate=True)
        if not result.ok or result.delta is None or result.schedule is None:
            raise ValueError("adopt requires a passing validation result")

        self._arrival += 1
        sb = StoredBlock(block.header, block.transactions, result.schedule, self._arrival)
        self.blocks[d] = sb
        self.children[d] = []
        self.children[block.header.predecessor].append(d)
        self.deltas[d] = result.delta
        for tx in block.transactions:
            self.tx_blocks.setdefault(tx.digest(), []).append(d)

        self._bytes["chain_headers"] += len(block.header.encode())
        self._bytes["chain_bodies"] += len(
            codec.enc_list(block.transactions, lambda t: t.encode()))
        self._bytes["chain_deltas"] += len(result.delta.encode())

        if sb.height <= old_height:
            # side branch no longer than the adopted one: first seen stays
            return AdoptionReport(old_head, old_head, old_height, old_height, (), (), ())

        # reorganize onto the longer branch
        orphaned: list[bytes] = []
        incoming: list[bytes] = []
        a, b = old_head, d
        while self.blocks[b].height > self.blocks[a].height:
            incoming.append(b)
            b = self.blocks[b].header.predecessor
        while a != b:
            orphaned.append(a)
            incoming.append(b)
            a = self.blocks[a].header.predecessor
            b = self.blocks[b].header.predecessor

        for od in orphaned:
            self.deltas[od].revert(self.head_state)
            del self.adopted[od]
        incoming.reverse()
        for nd in incoming:
            self.deltas[nd].apply(self.head_state)
            self.adopted[nd] = self.blocks[nd].height
        self.adopted_head = d

        new_txs = {
            t.digest()
            for nd in incoming
            for t in (self.blocks[nd].transactions or ())
        }
        returned = tuple(
            t
            for od in orphaned
            for t in (self.blocks[od].transactions or ())
            if t.digest() not in new_txs
        )
        return AdoptionReport(old_head, d, old_height, sb.height,
                              tuple(orphaned), tuple(incoming), returned)

    # -- confirmations ------------------------------------------------------

    def confirmations(self, tx_digest: bytes) -> Optional[int]:
        """1 + (head height - containing height) on the adopted branch.

        None when the transaction sits only on orphaned branches; unknown
        digests raise NotFoundError.
        """
        containing = self.tx_blocks.get(tx_digest)
        if not containing:
            raise NotFoundError("unknown transaction")
        for bd in containing:
            if bd in self.adopted:
                return self.head_height - self.blocks[bd].height + 1
        return None

    # -- conservation -------------------------------------------------------

    def total_supply(self) -> int:
        return sum(self.head_state.balances.values())

    def expected_supply(self) -> int:
        return self.genesis_supply + self.block_reward * self.head_height

    # -- size accounting ----------------------------------------------------

    def ledger_bytes(self) -> dict[str, int]:
        return dict(self._bytes)

    def recount_bytes(self) -> dict[str, int]:
        """Full recomputation; audits the incremental counters."""
        headers = sum(len(sb.header.encode()) for sb in self.blocks.values())
        bodies = sum(
            len(codec.enc_list(sb.transactions, lambda t: t.encode()))
            for sb in self.blocks.values() if sb.transactions is not None)
        deltas = sum(len(d.encode()) for d in self.deltas.values())
        return {"chain_headers": headers, "chain_bodies": bodies,
                "chain_deltas": deltas}

    # -- pruning ------------------------------------------------------------

    def prune(self, keep_recent: int) -> PruneReport:
        """Drop bodies and deltas below head height - keep_recent."""
        if keep_recent < self.reorg_safety:
            raise ConfigError(
                f"keep_recent {keep_recent} below reorg safety window {self.reorg_safety}")
        before = sum(self._bytes.values())
        cutoff = self.head_height - keep_recent
        bodies = deltas = 0
        if cutoff > 0:
            for d, sb in self.blocks.items():
                if sb.height >= cutoff:
                    continue
                if sb.transactions is not None:
                    self._bytes["chain_bodies"] -= len(
                        codec.enc_list(sb.transactions, lambda t: t.encode()))
                    sb.transactions = None
                    bodies += 1
                delta = self.deltas.pop(d, None)
                if delta is not None:
                    self._bytes["chain_deltas"] -= len(delta.encode())
                    deltas += 1
            self.first_full_block_height = max(self.first_full_block_height, cutoff)
        return PruneReport(max(cutoff, 0), bodies, deltas, before,
                           sum(self._bytes.values()))


# ---------------------------------------------------------------------------
# Assembly

def assemble_block(store: ChainStore, parent_digest: bytes,
                   mempool: Iterable[ChainTransaction], capacity: int,
                   producer: str, timestamp: float) -> Block:
    """Greedy packing in mempool order until capacity is exhausted.

    Transactions that do not fit (or no longer apply against the evolving
    block state) are skipped; later ones are still considered. The produced
    header carries nonce 0; grind mining fills it in afterwards.
    """
    parent = store.blocks.get(parent_digest)
    if parent is None:
        raise OrphanParentError("cannot assemble on an unknown parent")
    state = store.state_at(parent_digest)
    chosen: list[ChainTransaction] = []
    used = 0
    for tx in mempool:
        if used + tx.weight > capacity:
            continue
        if tx.amount <= 0 or tx.weight <= 0:
            continue
        if tx.sequence <= state.sequence(tx.sender):
            continue
        if state.balance(tx.sender) < tx.amount:
            continue
        chosen.append(tx)
        used += tx.weight
        state.balances[tx.sender] -= tx.amount
        state.balances[tx.recipient] = state.balance(tx.recipient) + tx.amount
        state.sequences[tx.sender] = tx.sequence
    if store.block_reward:
        state.balances[producer] = state.balance(producer) + store.block_reward
    header = BlockHeader(
        predecessor=parent_digest,
        tx_root=merkle_root([t.digest() for t in chosen]),
        state_root=state.root(),
        height=parent.height + 1,
        timestamp=timestamp,
        nonce=0,
        producer=producer,
    )
    return Block(header=header, transactions=tuple(chosen))


# ---------------------------------------------------------------------------
# Fast sync

def fast_sync(source: ChainStore,
              pivot_offset: int = DEFAULT_FASTSYNC_PIVOT_OFFSET,
              proof: ProofRule | None = None) -> ChainStore:
    """Bootstrap a new store from a source node.

    Headers come over for the whole adopted chain; state is materialized at
    pivot = head - pivot_offset and blocks from there on are fully replayed.
    A source shorter than the offset falls back to full replay. The resulting
    head state root must equal the source's, else SyncError.
    """
    chain = source.adopted_chain()
    head_height = source.head_height

    genesis_sb = source.blocks[source.genesis_digest]
    fresh = ChainStore(
        genesis_allocation=source.genesis_allocation,
        block_reward=source.block_reward,
        proof_rule=proof or source.proof_rule,
        schedule=genesis_sb.schedule,
        reorg_safety=source.reorg_safety,
    )
    if fresh.genesis_digest != source.genesis_digest:
        raise SyncError("genesis reconstruction mismatch")

    if head_height <= pivot_offset:
        # short chain: replay everything
        if source.first_full_block_height > 0:
            raise SyncError("source pruned below pivot; full replay impossible")
        for d in chain[1:]:
            block = source.reconstruct_block(d)
            res = fresh.validate_block(block)
            if not res.ok:
                raise SyncError(f"replayed block failed: {res.verdict.value}")
            fresh.adopt(block, res)
        _check_synced_root(fresh, source)
        return fresh

    pivot_height = head_height - pivot_offset
    if source.first_full_block_height > pivot_height:
        raise SyncError("source pruned above the pivot")
    pivot_digest = chain[pivot_height]
    pivot_state = source.state_at(pivot_digest)

    # install headers up to the pivot without bodies or deltas
    for d in chain[1:pivot_height + 1]:
        src = source.blocks[d]
        fresh._arrival += 1
        fresh.blocks[d] = StoredBlock(src.header, None, src.schedule, fresh._arrival)
        fresh.children[d] = []
        fresh.children[src.header.predecessor].append(d)
        fresh.adopted[d] = src.height
        fresh._bytes["chain_headers"] += len(src.header.encode())
    fresh.adopted_head = pivot_digest
    fresh.head_state = pivot_state.copy()
    fresh.first_full_block_height = pivot_height

    # replay the full blocks from the pivot on
    for d in chain[pivot_height + 1:]:
        block = source.reconstruct_block(d)
        res = fresh.validate_block(block)
        if not res.ok:
            raise SyncError(f"replayed block failed: {res.verdict.value} {res.detail}")
        fresh.adopt(block, res)

    _check_synced_root(fresh, source)
    return fresh


def _check_synced_root(fresh: ChainStore, source: ChainStore) -> None:
    if fresh.adopted_head != source.adopted_head:
        raise SyncError("synced head diverges from source")
    if fresh.head_state.root() != source.head_state.root():
        raise SyncError("synced state root diverges from source")
