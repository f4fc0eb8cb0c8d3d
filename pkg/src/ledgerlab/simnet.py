"""Deterministic discrete-event network simulation.

Events are totally ordered by (time, sequence) where sequence is a global
scheduling counter, so identical inputs replay byte-for-byte. All randomness
flows from one run seed, split into per-purpose streams by digest derivation;
adding a new consumer of randomness never perturbs existing streams.

Messages are canonical-encoded payloads delivered after sampled latency
(base + uniform jitter), can be dropped by link probability or an active
partition window, and are never retransmitted by the transport. Recovery,
where a protocol wants it, is the protocol's own rebroadcast/fetch logic.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol

from . import codec
from .errors import LedgerError
from .primitives import digest


class SchedulingError(LedgerError):
    """An event was scheduled before the current simulation time."""


class SimEventKind(enum.Enum):
    MESSAGE = 0
    TIMER = 1
    COMMAND = 2


@dataclass(frozen=True)
class SimEvent:
    at: float
    sequence: int
    kind: SimEventKind
    destination: int  # node id; commands use DRIVER_DESTINATION
    payload: bytes

    def encode(self) -> bytes:
        return (codec.enc_f64(self.at) + codec.enc_u64(self.sequence)
                + codec.enc_u8(self.kind.value) + codec.enc_u64(self.destination)
                + codec.enc_bytes(self.payload))


DRIVER_DESTINATION = 0xFFFF_FFFF


@dataclass(frozen=True)
class Partition:
    """During [start, end) nothing crosses between side_a and side_b."""

    start_s: float
    end_s: float
    side_a: frozenset[int]
    side_b: frozenset[int]

    def severs(self, now: float, u: int, v: int) -> bool:
        if not (self.start_s <= now < self.end_s):
            return False
        return ((u in self.side_a and v in self.side_b)
                or (u in self.side_b and v in self.side_a))


@dataclass(frozen=True)
class LinkModel:
    base_latency_s: float = 0.0
    jitter_s: float = 0.0          # uniform half-width around the base
    drop_prob: float = 0.0
    partitions: tuple[Partition, ...] = ()

    def severed(self, now: float, u: int, v: int) -> bool:
        return any(p.severs(now, u, v) for p in self.partitions)


def derive_rng(seed: int, label: str) -> random.Random:
    """Independent stream for (seed, label); stable across runs and platforms."""
    material = digest(codec.enc_u64(seed & codec.U64_MAX) + label.encode("utf-8"))
    return random.Random(int.from_bytes(material, "big"))


class SimNode(Protocol):  # pragma: no cover - structural type only
    def on_message(self, sim: "Simulation", now: float, payload: bytes) -> None: ...
    def on_timer(self, sim: "Simulation", now: float, payload: bytes) -> None: ...


class Scheduler:
    """Priority queue of events keyed by (at, sequence)."""

    def __init__(self) -> None:
        self.now = 0.0
        self._seq = 0
        self._heap: list[tuple[float, int, SimEvent]] = []

    def schedule(self, at: float, kind: SimEventKind, destination: int,
                 payload: bytes) -> SimEvent:
        if at < self.now:
            raise SchedulingError(f"cannot schedule {at:.6f} before now {self.now:.6f}")
        self._seq += 1
        ev = SimEvent(at=at, sequence=self._seq, kind=kind,
                      destination=destination, payload=payload)
        heapq.heappush(self._heap, (at, ev.sequence, ev))
        return ev

    def pop_due(self, horizon: float) -> Optional[SimEvent]:
        if not self._heap or self._heap[0][0] > horizon:
            return None
        at, _, ev = heapq.heappop(self._heap)
        self.now = at
        return ev

    def __len__(self) -> int:
        return len(self._heap)


class Simulation:
    """Wires nodes, driver, link model and scheduler into one run loop."""

    def __init__(self, seed: int, link: LinkModel,
                 adjacency: dict[int, list[int]],
                 nodes: Optional[dict[int, SimNode]] = None,
                 driver=None):
        self.seed = seed
        self.link = link
        self.adjacency = adjacency
        self.nodes: dict[int, SimNode] = nodes if nodes is not None else {}
        self.driver = driver
        self.scheduler = Scheduler()
        self._net_rng = {u: derive_rng(seed, f"net/{u}") for u in sorted(adjacency)}
        self._trace = hashlib.sha256()
        self.events_executed = 0

    @property
    def now(self) -> float:
        return self.scheduler.now

    # -- scheduling primitives ---------------------------------------------

    def set_timer(self, node_id: int, delay_s: float, payload: bytes) -> SimEvent:
        return self.scheduler.schedule(self.now + delay_s, SimEventKind.TIMER,
                                       node_id, payload)

    def schedule_command(self, delay_s: float, payload: bytes) -> SimEvent:
        return self.scheduler.schedule(self.now + delay_s, SimEventKind.COMMAND,
                                       DRIVER_DESTINATION, payload)

    def send(self, src: int, dst: int, payload: bytes) -> bool:
        """Unicast with latency/drop/partition applied; True if delivered."""
        rng = self._net_rng[src]
        if self.link.severed(self.now, src, dst):
            return False
        if self.link.drop_prob > 0 and rng.random() < self.link.drop_prob:
            return False
        latency = self.link.base_latency_s
        if self.link.jitter_s > 0:
            latency += rng.uniform(-self.link.jitter_s, self.link.jitter_s)
        latency = max(latency, 0.0)
        self.scheduler.schedule(self.now + latency, SimEventKind.MESSAGE, dst, payload)
        return True

    def broadcast(self, src: int, payload: bytes) -> int:
        """Send to every peer of src; returns the number of deliveries."""
        delivered = 0
        for dst in self.adjacency[src]:
            if self.send(src, dst, payload):
                delivered += 1
        return delivered

    # -- the loop -----------------------------------------------------------

    def run(self, horizon_s: float) -> None:
        """Execute events in (at, sequence) order until the horizon or drain."""
        while True:
            ev = self.scheduler.pop_due(horizon_s)
            if ev is None:
                break
            self._trace.update(
                codec.enc_f64(ev.at) + codec.enc_u64(ev.sequence)
                + codec.enc_u8(ev.kind.value) + codec.enc_u64(ev.destination)
                + digest(ev.payload))
            self.events_executed += 1
            if ev.kind is SimEventKind.COMMAND:
                self.driver.on_command(self, ev.at, ev.payload)
            elif ev.kind is SimEventKind.TIMER:
                self.nodes[ev.destination].on_timer(self, ev.at, ev.payload)
            else:
                self.nodes[ev.destination].on_message(self, ev.at, ev.payload)

    def trace_digest(self) -> str:
        return self._trace.hexdigest()


def mesh_adjacency(n: int) -> dict[int, list[int]]:
    return {u: [v for v in range(n) if v != u] for u in range(n)}


def ring_adjacency(n: int) -> dict[int, list[int]]:
    return {u: sorted({(u - 1) % n, (u + 1) % n} - {u}) for u in range(n)}
