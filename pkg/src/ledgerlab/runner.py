"""Builds a live simulation out of a config and drives it to the horizon."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .blockchain import ChainStore, GrindProof, LotteryProof, PosProof
from .errors import ConfigError, InvariantViolation
from .lattice import LatticeLedger, NodeTier
from .leader_election import DifficultySchedule, StakeRegistry
from .nodes import (
    ChainNode,
    ChainTxDriver,
    CMD_FORK_INJECT,
    CMD_LATTICE_SEND,
    ForkInjectionDriver,
    LatticeNode,
    LatticeSendDriver,
    MultiDriver,
)
from .recording import RunRecorder
from .scenario import Config
from .simnet import LinkModel, Simulation, mesh_adjacency, ring_adjacency


@dataclass
class RunResult:
    scenario_id: str
    seed: int
    config: Config
    recorder: RunRecorder
    trace: str
    events: int
    breach: Optional[str] = None
    nodes: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.breach is None


def account_names(count: int) -> list[str]:
    return [f"acct-{i:02d}" for i in range(count)]


def _link_model(cfg: Config) -> LinkModel:
    return LinkModel(
        base_latency_s=cfg["net.base_latency_ms"] / 1000.0,
        jitter_s=cfg["net.jitter_ms"] / 1000.0,
        drop_prob=cfg["net.drop_prob"],
        partitions=cfg["net.partitions"],
    )


def _adjacency(cfg: Config) -> dict[int, list[int]]:
    n = cfg["net.nodes"]
    if cfg["net.topology"] == "mesh":
        return mesh_adjacency(n)
    return ring_adjacency(n)


def _build_chain(cfg: Config, seed: int, recorder: RunRecorder) -> Simulation:
    n = cfg["net.nodes"]
    miners = cfg["chain.miners"]
    consensus = cfg["chain.consensus"]
    mode = cfg["pow.mode"] if consensus == "pow" else "pos"
    interval = (cfg["pos.slot_interval_s"] if consensus == "pos"
                else cfg["pow.target_interval_s"])
    rates = list(cfg["chain.hash_rates"]) or [1.0] * miners

    genesis = {name: cfg["chain.genesis_amount"]
               for name in account_names(cfg["chain.accounts"])}

    registry = None
    if consensus == "pos":
        stakes = cfg["pos.stakes"]
        registry = StakeRegistry(
            deposits={f"val-{i}": s for i, s in enumerate(stakes)})

    schedule = DifficultySchedule(
        target_interval_s=interval,
        retarget_window=cfg["pow.retarget_window"],
        difficulty=float(2 ** cfg["pow.difficulty_bits"]),
    )

    def proof_rule():
        if consensus == "pos":
            return PosProof(registry, seed, cfg["pos.slot_interval_s"])
        if mode == "grind":
            return GrindProof()
        return LotteryProof()

    nodes: dict[int, ChainNode] = {}
    for i in range(n):
        store = ChainStore(genesis, cfg["chain.block_reward"],
                           proof_rule=proof_rule(), schedule=schedule,
                           reorg_safety=cfg["chain.reorg_safety"])
        if consensus == "pos":
            hosts_validator = i < len(registry.deposits)
            nodes[i] = ChainNode(
                i, store, recorder, seed, cfg["chain.capacity_units"],
                producer_id=f"val-{i}" if hosts_validator else "",
                mode="pos" if hosts_validator else "lottery",
                hash_rate=0.0, pos_registry=registry,
                pos_slot_interval=cfg["pos.slot_interval_s"],
                hosted_validators=(f"val-{i}",) if hosts_validator else (),
                sample_ledger=(i == 0))
        else:
            mining = i < miners
            nodes[i] = ChainNode(
                i, store, recorder, seed, cfg["chain.capacity_units"],
                producer_id=f"miner-{i}" if mining else "",
                mode=mode,
                hash_rate=rates[i] if mining else 0.0,
                sample_ledger=(i == 0))

    driver = ChainTxDriver(
        recorder, seed,
        senders=account_names(cfg["chain.accounts"]),
        entry_nodes=list(range(n)),
        rate_per_s=cfg["chain.tx_rate_per_s"],
        tx_weight=cfg["chain.tx_weight"],
        max_amount=cfg["chain.max_amount"],
    )

    sim = Simulation(seed, _link_model(cfg), _adjacency(cfg),
                     nodes=dict(nodes), driver=driver)
    for i in sorted(nodes):
        nodes[i].start(sim)
    driver.start(sim)
    return sim


def representative_names(count: int, reps: int) -> list[str]:
    """Representatives spread evenly through the account list."""
    names = account_names(count)
    indices = sorted({round(i * count / reps) for i in range(reps)})
    if len(indices) < reps:  # rounding collision on tiny populations
        indices = list(range(reps))
    return [names[i] for i in indices]


def _build_lattice(cfg: Config, seed: int, recorder: RunRecorder,
                   horizon_s: float) -> Simulation:
    n = cfg["net.nodes"]
    count = cfg["lattice.accounts"]
    reps = cfg["lattice.representatives"]
    names = account_names(count)
    rep_names = representative_names(count, reps)
    genesis = {name: (cfg["lattice.genesis_amount"], rep_names[i % reps])
               for i, name in enumerate(names)}

    offline_count = cfg["lattice.offline_accounts"]
    offline = frozenset(names[-offline_count:]) if offline_count else frozenset()
    if offline & set(rep_names):
        raise ConfigError("offline account range overlaps the representatives")

    host_of = {name: i % n for i, name in enumerate(names)}
    cement = cfg["lattice.cement_delay_s"] or None
    tiers = cfg["lattice.tiers"]

    nodes: dict[int, LatticeNode] = {}
    for i in range(n):
        tier = NodeTier(tiers[i]) if tiers else NodeTier.HISTORICAL
        ledger = LatticeLedger(
            genesis, spam_bits=cfg["lattice.spam_difficulty_bits"],
            quorum_fraction=cfg["lattice.quorum_fraction"],
            cement_delay_s=cement,
            gap_buffer=cfg["lattice.gap_buffer"],
            tier=tier)
        hosted = tuple(a for a in names if host_of[a] == i)
        nodes[i] = LatticeNode(
            i, ledger, recorder,
            hosted_accounts=hosted,
            representative_accounts=tuple(a for a in hosted if a in rep_names),
            offline_accounts=offline,
            sample_ledger_every=20 if i == 0 else 0)

    attackers: list[str] = []
    if cfg["fork.interval_s"] > 0:
        attackers = [a for a in names
                     if a not in offline and a not in rep_names]
        attackers = attackers[:cfg["fork.attackers"]]
        if not attackers:
            raise ConfigError("no eligible attacker accounts for fork injection")

    # Attackers only equivocate. Scripted sends or receives on the same
    # account would race the injected pair and hand representatives a third
    # candidate; single-round voting cannot recover from a three-way split.
    senders = [a for a in names if a not in offline and a not in attackers]
    recipients = [a for a in names if a not in attackers]
    drivers: dict[int, object] = {
        CMD_LATTICE_SEND: LatticeSendDriver(
            recorder, seed, senders=senders, recipients=recipients,
            host_of=host_of,
            rate_per_s=cfg["lattice.send_rate_per_account_s"] * len(senders),
            max_amount=cfg["lattice.max_amount"]),
    }
    if attackers:
        drivers[CMD_FORK_INJECT] = ForkInjectionDriver(
            recorder, seed, attackers=attackers, host_of=host_of,
            interval_s=cfg["fork.interval_s"],
            delivery_latency_s=cfg["fork.delivery_latency_ms"] / 1000.0,
            max_amount=cfg["lattice.max_amount"],
            stop_after_s=horizon_s - cfg["fork.interval_s"])

    driver = MultiDriver(drivers)
    sim = Simulation(seed, _link_model(cfg), _adjacency(cfg),
                     nodes=dict(nodes), driver=driver)
    driver.start(sim)
    return sim


def build_simulation(cfg: Config, seed: int, recorder: RunRecorder,
                     horizon_s: Optional[float] = None) -> Simulation:
    horizon = horizon_s if horizon_s is not None else cfg["scenario.horizon_s"]
    if cfg.paradigm == "chain":
        return _build_chain(cfg, seed, recorder)
    return _build_lattice(cfg, seed, recorder, horizon)


def run(cfg: Config, seed: int, horizon_s: Optional[float] = None) -> RunResult:
    """One deterministic run; an invariant breach stops it and is reported."""
    recorder = RunRecorder()
    horizon = horizon_s if horizon_s is not None else cfg["scenario.horizon_s"]
    sim = build_simulation(cfg, seed, recorder, horizon)
    breach = None
    try:
        sim.run(horizon)
        _final_audit(cfg, sim)
        keep = cfg["chain.prune_keep_recent"] if cfg.paradigm == "chain" else 0
        if keep:
            for i in sorted(sim.nodes):
                sim.nodes[i].store.prune(keep)
    except InvariantViolation as exc:
        breach = str(exc)
    return RunResult(
        scenario_id=cfg.scenario_id, seed=seed, config=cfg,
        recorder=recorder, trace=sim.trace_digest(),
        events=sim.events_executed, breach=breach, nodes=dict(sim.nodes))


def _final_audit(cfg: Config, sim: Simulation) -> None:
    """End-of-run accounting sweep over every node's full state."""
    for i in sorted(sim.nodes):
        node = sim.nodes[i]
        if isinstance(node, ChainNode):
            if node.store.total_supply() != node.store.expected_supply():
                raise InvariantViolation(
                    "chain balance conservation",
                    f"node {i} final supply diverged")
            recount = node.store.recount_bytes()
            if recount != node.store.ledger_bytes():
                raise InvariantViolation(
                    "ledger size accounting",
                    f"node {i}: recount {recount} != {node.store.ledger_bytes()}")
        elif isinstance(node, LatticeNode):
            ledger = node.ledger
            settled, pend = ledger.audit_totals()
            if (settled, pend) != (ledger.total_balance, ledger.total_pending):
                raise InvariantViolation(
                    "lattice balance conservation",
                    f"node {i}: audit {settled}/{pend} != counters "
                    f"{ledger.total_balance}/{ledger.total_pending}")
            ledger.check_conservation()
            if ledger.recompute_weights() != {
                    r: w for r, w in ledger.rep_weight.items() if w != 0}:
                raise InvariantViolation(
                    "delegated weight tracking",
                    f"node {i}: incremental weights diverged from rescan")
            if ledger.recount_bytes() != ledger.ledger_bytes():
                raise InvariantViolation(
                    "ledger size accounting",
                    f"node {i}: recount != incremental byte totals")
