"""Protocol behavior of simulated nodes: mining, gossip, votes, receives.

Wire messages are canonical-encoded with a 1-byte tag. Blocks are broadcast
by their producer; a node that sees a block with an unknown parent parks it
and asks the sender for the missing predecessor (that fetch is the only
recovery path, the transport never retransmits). Lattice blocks are
rebroadcast once per node, representatives attaching their vote, so in a
full mesh every vote reaches every node riding the block it endorses.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

from . import codec
from .blockchain import (
    Block,
    ChainStore,
    ChainTransaction,
    Verdict,
    assemble_block,
)
from .codec import Reader
from .errors import InvariantViolation
from .lattice import (
    BlockKind,
    LatticeBlock,
    LatticeLedger,
    Outcome,
    VoteRecord,
    make_vote,
)
from .leader_election import WorkCounter, mine, pos_select
from .primitives import identity_for
from .recording import RunRecorder
from .simnet import Simulation, derive_rng

MSG_CHAIN_TX = 0
MSG_CHAIN_BLOCK = 1
MSG_CHAIN_REQ = 2
MSG_CHAIN_RESP = 3
MSG_LAT_BLOCK = 10

TIMER_MINE = 0
TIMER_POS_SLOT = 1

ORPHAN_BUFFER_LIMIT = 10_000


def _chain_block_msg(tag: int, sender: int, block: Block) -> bytes:
    return codec.enc_u8(tag) + codec.enc_u64(sender) + block.encode()


def _lattice_block_msg(sender: int, block: LatticeBlock,
                       votes: list[VoteRecord]) -> bytes:
    return (codec.enc_u8(MSG_LAT_BLOCK) + codec.enc_u64(sender) + block.encode()
            + codec.enc_list(votes, lambda v: v.encode()))


class ChainNode:
    """A blockchain full node, optionally mining or validating."""

    def __init__(self, node_id: int, store: ChainStore, recorder: RunRecorder,
                 run_seed: int, capacity: int, producer_id: str,
                 mode: str = "lottery", hash_rate: float = 0.0,
                 pos_registry=None, pos_slot_interval: float = 1.0,
                 hosted_validators: tuple[str, ...] = (),
                 check_conservation: bool = True,
                 sample_ledger: bool = False):
        self.node_id = node_id
        self.store = store
        self.recorder = recorder
        self.capacity = capacity
        self.producer_id = producer_id
        self.mode = mode
        self.hash_rate = hash_rate
        self.pos_registry = pos_registry
        self.pos_slot_interval = pos_slot_interval
        self.hosted_validators = hosted_validators
        self.check_conservation = check_conservation
        self.sample_ledger = sample_ledger
        self.run_seed = run_seed
        self.rng = derive_rng(run_seed, f"miner/{node_id}")
        self.mempool: dict[bytes, ChainTransaction] = {}
        self.orphans: dict[bytes, list[Block]] = {}
        self.requested: set[bytes] = set()
        self._pending_grind: Optional[Block] = None
        self.work = WorkCounter()

    # -- mining -------------------------------------------------------------

    def start(self, sim: Simulation) -> None:
        if self.mode == "lottery" and self.hash_rate > 0:
            self._schedule_lottery(sim)
        elif self.mode == "grind" and self.hash_rate > 0:
            self._schedule_grind(sim)
        elif self.mode == "pos":
            self._schedule_slot(sim, 1)

    def _head_difficulty(self) -> float:
        return self.store.blocks[self.store.adopted_head].schedule.difficulty

    def _schedule_lottery(self, sim: Simulation) -> None:
        delay = self.rng.expovariate(self.hash_rate / self._head_difficulty())
        payload = codec.enc_u8(TIMER_MINE) + codec.enc_digest(self.store.adopted_head)
        sim.set_timer(self.node_id, delay, payload)

    def _schedule_grind(self, sim: Simulation) -> None:
        head = self.store.adopted_head
        block = assemble_block(self.store, head, list(self.mempool.values()),
                               self.capacity, self.producer_id, sim.now)
        bits = self.store.blocks[head].schedule.difficulty_bits
        counter = WorkCounter()
        nonce_seed = int.from_bytes(block.header.work_digest()[:8], "big") ^ self.node_id
        nonce = mine(block.header.work_digest(), bits, nonce_seed, counter=counter)
        self.work.add(counter.evaluations)
        mined = Block(header=replace(block.header, nonce=nonce),
                      transactions=block.transactions)
        self._pending_grind = mined
        duration = counter.evaluations / self.hash_rate
        payload = codec.enc_u8(TIMER_MINE) + codec.enc_digest(head)
        sim.set_timer(self.node_id, duration, payload)

    def _schedule_slot(self, sim: Simulation, slot: int) -> None:
        at = slot * self.pos_slot_interval
        if at < sim.now:
            return
        payload = codec.enc_u8(TIMER_POS_SLOT) + codec.enc_u64(slot)
        sim.set_timer(self.node_id, at - sim.now, payload)

    def on_timer(self, sim: Simulation, now: float, payload: bytes) -> None:
        r = Reader(payload)
        tag = r.u8()
        if tag == TIMER_MINE:
            parent = r.digest()
            if parent != self.store.adopted_head:
                return  # the chain moved on while this attempt was running
            if self.mode == "grind":
                block = self._pending_grind
                self._pending_grind = None
            else:
                block = assemble_block(self.store, parent,
                                       list(self.mempool.values()),
                                       self.capacity, self.producer_id, now)
            self.recorder.block_mined(now, self.node_id, block.digest(),
                                      block.header.height)
            self._ingest_block(sim, now, block, sender=self.node_id)
            sim.broadcast(self.node_id,
                          _chain_block_msg(MSG_CHAIN_BLOCK, self.node_id, block))
        elif tag == TIMER_POS_SLOT:
            slot = r.u64()
            leader = pos_select(self.pos_registry, self.run_seed, slot)
            if leader in self.hosted_validators:
                block = assemble_block(self.store, self.store.adopted_head,
                                       list(self.mempool.values()),
                                       self.capacity, leader, now)
                self.recorder.block_mined(now, self.node_id, block.digest(),
                                          block.header.height)
                self._ingest_block(sim, now, block, sender=self.node_id)
                sim.broadcast(self.node_id,
                              _chain_block_msg(MSG_CHAIN_BLOCK, self.node_id, block))
            self._schedule_slot(sim, slot + 1)

    # -- messages -----------------------------------------------------------

    def submit_transaction(self, sim: Simulation, tx: ChainTransaction) -> None:
        """Entry point for wallet traffic: pool it here, gossip it once."""
        self._add_to_mempool(tx)
        sim.broadcast(self.node_id,
                      codec.enc_u8(MSG_CHAIN_TX) + codec.enc_u64(self.node_id)
                      + tx.encode())

    def on_message(self, sim: Simulation, now: float, payload: bytes) -> None:
        r = Reader(payload)
        tag = r.u8()
        if tag == MSG_CHAIN_TX:
            r.u64()  # sender node, unused
            tx = ChainTransaction.decode(r)
            self._add_to_mempool(tx)
        elif tag in (MSG_CHAIN_BLOCK, MSG_CHAIN_RESP):
            sender = r.u64()
            block = Block.decode(r)
            self._ingest_block(sim, now, block, sender)
        elif tag == MSG_CHAIN_REQ:
            sender = r.u64()
            wanted = r.digest()
            sb = self.store.blocks.get(wanted)
            if sb is not None and sb.transactions is not None:
                block = Block(header=sb.header, transactions=sb.transactions)
                sim.send(self.node_id, sender,
                         _chain_block_msg(MSG_CHAIN_RESP, self.node_id, block))

    def _add_to_mempool(self, tx: ChainTransaction) -> None:
        d = tx.digest()
        if d in self.mempool:
            return
        if tx.amount <= 0 or tx.weight <= 0 or not tx.verify_signature():
            return
        self.mempool[d] = tx

    def _ingest_block(self, sim: Simulation, now: float, block: Block,
                      sender: int) -> None:
        d = block.digest()
        if d in self.store.blocks:
            return
        self.requested.clear()  # progress: allow re-fetching anything still missing
        res = self.store.validate_block(block)
        if res.verdict is Verdict.UNKNOWN_PARENT \
                and block.header.predecessor not in self.store.blocks:
            self._park_orphan(sim, block, sender)
            return
        if not res.ok:
            return
        report = self.store.adopt(block, res)
        heights = {d: block.header.height}
        self.recorder.adoption(now, self.node_id, report.old_height,
                               report.new_height, report.orphaned,
                               report.reorged_in, heights)
        if report.head_moved:
            for nd in report.reorged_in:
                for tx in self.store.blocks[nd].transactions or ():
                    self.mempool.pop(tx.digest(), None)
            for tx in report.returned_transactions:
                self.mempool.setdefault(tx.digest(), tx)
            stale = [td for td, tx in self.mempool.items()
                     if tx.sequence <= self.store.head_state.sequence(tx.sender)]
            for td in stale:
                del self.mempool[td]
            if self.check_conservation:
                if self.store.total_supply() != self.store.expected_supply():
                    raise InvariantViolation(
                        "chain balance conservation",
                        f"supply {self.store.total_supply()} != "
                        f"genesis+rewards {self.store.expected_supply()}")
            if self.sample_ledger:
                self.recorder.ledger_sample(
                    now, self.node_id, sum(self.store.ledger_bytes().values()))
            if self.mode == "lottery" and self.hash_rate > 0:
                self._schedule_lottery(sim)
            elif self.mode == "grind" and self.hash_rate > 0:
                self._schedule_grind(sim)
        # anything parked on this block can now be tried
        for waiting in self.orphans.pop(d, []):
            self._ingest_block(sim, now, waiting, sender)

    def _park_orphan(self, sim: Simulation, block: Block, sender: int) -> None:
        parent = block.header.predecessor
        bucket = self.orphans.setdefault(parent, [])
        d = block.digest()
        if len(bucket) < 64 and all(b.digest() != d for b in bucket):
            bucket.append(block)
        total = sum(len(b) for b in self.orphans.values())
        if total > ORPHAN_BUFFER_LIMIT:
            oldest = next(iter(self.orphans))
            self.orphans.pop(oldest)
        if sender != self.node_id and parent not in self.requested:
            self.requested.add(parent)
            sim.send(self.node_id, sender,
                     codec.enc_u8(MSG_CHAIN_REQ) + codec.enc_u64(self.node_id)
                     + codec.enc_digest(parent))


class LatticeNode:
    """A lattice node hosting accounts; votes if it hosts a representative."""

    def __init__(self, node_id: int, ledger: LatticeLedger, recorder: RunRecorder,
                 hosted_accounts: tuple[str, ...],
                 representative_accounts: tuple[str, ...] = (),
                 offline_accounts: frozenset[str] = frozenset(),
                 sample_ledger_every: int = 0):
        self.node_id = node_id
        self.ledger = ledger
        self.recorder = recorder
        self.hosted_accounts = hosted_accounts
        self.hosted_set = set(hosted_accounts)
        self.representative_accounts = representative_accounts
        self.offline_accounts = offline_accounts
        self.sample_ledger_every = sample_ledger_every
        self._applied_since_sample = 0
        self.work = WorkCounter()

    # -- outbound -----------------------------------------------------------

    def submit_block(self, sim: Simulation, now: float, block: LatticeBlock) -> Outcome:
        """Apply a locally created block and gossip it."""
        outcome = self.ledger.receive_block(block, now)
        self._after_outcome(sim, now, outcome)
        return outcome

    def _forward(self, sim: Simulation, block: LatticeBlock) -> None:
        votes = sorted(self.ledger.votes_by_choice.get(block.digest(), {}).values(),
                       key=lambda v: v.representative)
        sim.broadcast(self.node_id,
                      _lattice_block_msg(self.node_id, block, list(votes)))

    # -- inbound ------------------------------------------------------------

    def on_message(self, sim: Simulation, now: float, payload: bytes) -> None:
        r = Reader(payload)
        tag = r.u8()
        if tag != MSG_LAT_BLOCK:
            return
        r.u64()  # sender, unused: gossip is undirected
        block = LatticeBlock.decode(r)
        votes = r.list_(VoteRecord.decode)
        outcome = self.ledger.receive_block(block, now, votes)
        self._after_outcome(sim, now, outcome, wire_block=block)

    def on_timer(self, sim: Simulation, now: float, payload: bytes) -> None:
        pass  # lattice behavior is purely reactive

    # -- shared outcome handling -------------------------------------------

    def _after_outcome(self, sim: Simulation, now: float, outcome: Outcome,
                       wire_block: Optional[LatticeBlock] = None) -> None:
        from .lattice import OutcomeStatus

        for key in outcome.conflicts_opened:
            self.recorder.conflict_opened(now, self.node_id, key[0], key[1])

        # vote on every block this node just accepted for the first time
        for blk in outcome.applied:
            for rep in self.representative_accounts:
                if (rep, blk.predecessor) in self.ledger.rep_subject_choice:
                    continue
                vote = make_vote(identity_for(rep), subject=blk.predecessor,
                                 choice=blk.digest(),
                                 weight=self.ledger.representative_weight(rep))
                vote_outcome = self.ledger.add_vote(vote, now)
                outcome.resolutions.extend(vote_outcome.resolutions)
                outcome.applied.extend(vote_outcome.applied)

        for res in outcome.resolutions:
            winner_weight, runner_up = self._resolution_weights(res)
            self.recorder.conflict_resolved(now, self.node_id, res.account,
                                            res.subject, res.winner,
                                            winner_weight, runner_up)

        # forward every newly applied block, and conflict candidates, once
        forwarded: set[bytes] = set()
        for blk in outcome.applied:
            d = blk.digest()
            if d not in forwarded:
                forwarded.add(d)
                self._forward(sim, blk)
        if outcome.status is OutcomeStatus.CONFLICT and wire_block is not None:
            d = wire_block.digest()
            if d not in forwarded:
                forwarded.add(d)
                self._forward(sim, wire_block)

        self._auto_receive(sim, now, outcome)
        self._maybe_sample(now, outcome)

    def _resolution_weights(self, res) -> tuple[int, int]:
        conflict = self.ledger.conflicts.get((res.account, res.subject))
        if conflict is None:
            return 0, 0
        tally: dict[bytes, int] = {c: 0 for c in conflict.candidates}
        for v in conflict.votes.values():
            if v.choice in tally:
                tally[v.choice] += v.weight
        winner_weight = tally.get(res.winner, 0)
        others = [w for c, w in tally.items() if c != res.winner]
        return winner_weight, max(others, default=0)

    def _auto_receive(self, sim: Simulation, now: float, outcome: Outcome) -> None:
        # recipients hosted here sign incoming funds in immediately when online
        queue = [b for b in outcome.applied if b.kind is BlockKind.SEND]
        while queue:
            blk = queue.pop(0)
            recipient = blk.counterparty
            if recipient not in self.hosted_set or recipient in self.offline_accounts:
                continue
            send_digest = blk.digest()
            if send_digest not in self.ledger.pending:
                continue  # already received or rolled back
            receive = self.ledger.create_receive(recipient, send_digest,
                                                 counter=self.work)
            sub = self.ledger.receive_block(receive, now)
            self._record_receives(now, sub)
            for extra in sub.applied:
                if extra.kind is BlockKind.SEND:
                    queue.append(extra)
                self._forward(sim, extra)

    def _record_receives(self, now: float, outcome: Outcome) -> None:
        for blk in outcome.applied:
            if blk.kind is BlockKind.RECEIVE:
                self.recorder.receive_applied(now, self.node_id,
                                              blk.counterparty, blk.digest())

    def _maybe_sample(self, now: float, outcome: Outcome) -> None:
        self._record_receives(now, outcome)
        if not self.sample_ledger_every:
            return
        self._applied_since_sample += len(outcome.applied)
        if self._applied_since_sample >= self.sample_ledger_every:
            self._applied_since_sample = 0
            self.recorder.ledger_sample(
                now, self.node_id, sum(self.ledger.ledger_bytes().values()))


class LightLatticeNode:
    """Tier `light`: no ledger, just its own heads/balances and gossip relay."""

    def __init__(self, node_id: int, hosted_accounts: dict[str, tuple[int, bytes]]):
        # account -> (starting balance, genesis head digest)
        self.node_id = node_id
        self.balances = {a: b for a, (b, _) in hosted_accounts.items()}
        self.heads = {a: h for a, (_, h) in hosted_accounts.items()}
        self.pending_for_me: dict[bytes, tuple[str, int]] = {}
        self.seen: set[bytes] = set()

    def on_message(self, sim: Simulation, now: float, payload: bytes) -> None:
        r = Reader(payload)
        if r.u8() != MSG_LAT_BLOCK:
            return
        r.u64()
        block = LatticeBlock.decode(r)
        d = block.digest()
        if d in self.seen:
            return
        self.seen.add(d)
        if not block.verify_signature():
            return
        if block.kind is BlockKind.SEND and block.counterparty in self.balances:
            self.pending_for_me[d] = (block.counterparty, block.amount)
        sim.broadcast(self.node_id, payload)  # relay, storing nothing else

    def on_timer(self, sim: Simulation, now: float, payload: bytes) -> None:
        pass

    def stored_foreign_blocks(self) -> int:
        return 0  # the tier contract: observe and create only


# ---------------------------------------------------------------------------
# Traffic drivers

CMD_CHAIN_TX = 0
CMD_LATTICE_SEND = 1
CMD_FORK_INJECT = 2


class MultiDriver:
    """Dispatches driver commands by their leading tag byte."""

    def __init__(self, children: dict[int, object]):
        self.children = children

    def start(self, sim: Simulation) -> None:
        for tag in sorted(self.children):
            self.children[tag].start(sim)

    def on_command(self, sim: Simulation, now: float, payload: bytes) -> None:
        self.children[payload[0]].on_command(sim, now, payload)


class ChainTxDriver:
    """Poisson wallet traffic for the blockchain paradigm."""

    def __init__(self, recorder: RunRecorder, run_seed: int,
                 senders: list[str], entry_nodes: list[int],
                 rate_per_s: float, tx_weight: int, max_amount: int = 5):
        self.recorder = recorder
        self.senders = senders
        self.entry_nodes = entry_nodes
        self.rate_per_s = rate_per_s
        self.tx_weight = tx_weight
        self.max_amount = max_amount
        self.rng = derive_rng(run_seed, "driver/chain-tx")
        self.next_sequence = {s: 1 for s in senders}
        self.created = 0

    def start(self, sim: Simulation) -> None:
        if self.rate_per_s > 0:
            sim.schedule_command(self.rng.expovariate(self.rate_per_s),
                                 bytes([CMD_CHAIN_TX]))

    def on_command(self, sim: Simulation, now: float, payload: bytes) -> None:
        from .blockchain import make_transaction

        sender = self.senders[self.rng.randrange(len(self.senders))]
        others = [s for s in self.senders if s != sender]
        recipient = others[self.rng.randrange(len(others))]
        amount = self.rng.randint(1, self.max_amount)
        seq = self.next_sequence[sender]
        self.next_sequence[sender] = seq + 1
        tx = make_transaction(identity_for(sender), recipient, amount, seq,
                              self.tx_weight)
        entry = self.entry_nodes[self.rng.randrange(len(self.entry_nodes))]
        sim.nodes[entry].submit_transaction(sim, tx)
        self.created += 1
        sim.schedule_command(self.rng.expovariate(self.rate_per_s),
                             bytes([CMD_CHAIN_TX]))


class LatticeSendDriver:
    """Poisson send traffic for the lattice paradigm; recipients auto-receive."""

    def __init__(self, recorder: RunRecorder, run_seed: int,
                 senders: list[str], recipients: list[str],
                 host_of: dict[str, int],
                 rate_per_s: float, max_amount: int = 5):
        self.recorder = recorder
        self.senders = senders
        self.recipients = recipients
        self.host_of = host_of
        self.rate_per_s = rate_per_s
        self.max_amount = max_amount
        self.rng = derive_rng(run_seed, "driver/lattice-send")
        self.created = 0

    def start(self, sim: Simulation) -> None:
        if self.rate_per_s > 0:
            sim.schedule_command(self.rng.expovariate(self.rate_per_s),
                                 bytes([CMD_LATTICE_SEND]))

    def on_command(self, sim: Simulation, now: float, payload: bytes) -> None:
        from .lattice import InsufficientBalanceError

        sender = self.senders[self.rng.randrange(len(self.senders))]
        others = [a for a in self.recipients if a != sender]
        recipient = others[self.rng.randrange(len(others))]
        amount = self.rng.randint(1, self.max_amount)
        node: LatticeNode = sim.nodes[self.host_of[sender]]
        try:
            block = node.ledger.create_send(sender, recipient, amount,
                                            counter=node.work)
        except InsufficientBalanceError:
            block = None  # broke account this tick; traffic continues
        if block is not None:
            self.recorder.send_created(now, node.node_id, block.digest(),
                                       sender, recipient, amount)
            node.submit_block(sim, now, block)
            self.created += 1
        sim.schedule_command(self.rng.expovariate(self.rate_per_s),
                             bytes([CMD_LATTICE_SEND]))


class ForkInjectionDriver:
    """Periodically equivocates: two sends spending the same head."""

    def __init__(self, recorder: RunRecorder, run_seed: int,
                 attackers: list[str], host_of: dict[str, int],
                 interval_s: float, delivery_latency_s: float,
                 max_amount: int = 5, stop_after_s: float = float("inf")):
        self.recorder = recorder
        self.attackers = attackers
        self.host_of = host_of
        self.interval_s = interval_s
        self.delivery_latency_s = delivery_latency_s
        self.max_amount = max_amount
        self.stop_after_s = stop_after_s
        self.rng = derive_rng(run_seed, "driver/fork-inject")
        self.injected = 0

    def start(self, sim: Simulation) -> None:
        sim.schedule_command(self.interval_s, bytes([CMD_FORK_INJECT]))

    def on_command(self, sim: Simulation, now: float, payload: bytes) -> None:
        from .lattice import InsufficientBalanceError
        from .simnet import SimEventKind

        if now > self.stop_after_s:
            return  # too close to the horizon for the votes to land
        attacker = self.attackers[self.rng.randrange(len(self.attackers))]
        node: LatticeNode = sim.nodes[self.host_of[attacker]]
        ledger = node.ledger
        others = sorted(a for a in ledger.accounts if a != attacker)
        r1 = others[self.rng.randrange(len(others))]
        r2 = others[self.rng.randrange(len(others) - 1)]
        if r2 == r1:
            r2 = others[-1] if others[-1] != r1 else others[0]
        amount = self.rng.randint(1, self.max_amount)
        head = ledger.head(attacker)
        try:
            a = ledger.create_send(attacker, r1, amount, head=head,
                                   counter=node.work)
            b = ledger.create_send(attacker, r2, amount + 1, head=head,
                                   counter=node.work)
        except InsufficientBalanceError:
            sim.schedule_command(self.interval_s, bytes([CMD_FORK_INJECT]))
            return
        self.recorder.conflict_injected(now, head, a.digest(), b.digest())
        self.injected += 1
        # split delivery: half the network hears one spend first
        targets = sorted(sim.nodes)
        half = len(targets) // 2
        for i, dst in enumerate(targets):
            chosen = a if i < half else b
            msg = _lattice_block_msg(node.node_id, chosen, [])
            sim.scheduler.schedule(now + self.delivery_latency_s,
                                   SimEventKind.MESSAGE, dst, msg)
        sim.schedule_command(self.interval_s, bytes([CMD_FORK_INJECT]))
