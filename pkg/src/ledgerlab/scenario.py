"""Scenario configuration: flat typed key=value files, presets, overrides.

A config is a flat mapping of dotted keys to typed values. Files hold one
`key = value` pair per line; `#` starts a comment. Every key must appear in
the schema; anything else is rejected by name so typos fail loudly instead
of silently running a default.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .simnet import Partition

_MISSING = object()

GRIND_BITS_LIMIT = 24  # desk-scale literal mining stays tractable below this


def _parse_partitions(raw: str) -> tuple[Partition, ...]:
    """Syntax: "start-end:ids|ids" with ";" between windows, e.g. "30-60:0,1|2,3"."""
    raw = raw.strip()
    if not raw:
        return ()
    out = []
    for chunk in raw.split(";"):
        try:
            window, sides = chunk.split(":", 1)
            start, end = (float(x) for x in window.split("-", 1))
            a, b = sides.split("|", 1)
            side_a = frozenset(int(x) for x in a.split(",") if x != "")
            side_b = frozenset(int(x) for x in b.split(",") if x != "")
        except ValueError as exc:
            raise ValueError(f"bad partition window {chunk!r}") from exc
        if end <= start or not side_a or not side_b or side_a & side_b:
            raise ValueError(f"bad partition window {chunk!r}")
        out.append(Partition(start_s=start, end_s=end,
                             side_a=side_a, side_b=side_b))
    return tuple(out)


def _parse_floats(raw: str) -> tuple[float, ...]:
    raw = raw.strip()
    return tuple(float(x) for x in raw.split(",")) if raw else ()


def _parse_ints(raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    return tuple(int(x) for x in raw.split(",")) if raw else ()


def _parse_strs(raw: str) -> tuple[str, ...]:
    raw = raw.strip()
    return tuple(x.strip() for x in raw.split(",")) if raw else ()


# key -> (parser, default); _MISSING defaults must be supplied by the
# preset or config file
SCHEMA: dict[str, tuple] = {
    "scenario.id": (str, _MISSING),
    "scenario.paradigm": (str, _MISSING),  # "chain" | "lattice"
    "scenario.horizon_s": (float, 60.0),

    "net.nodes": (int, 4),
    "net.topology": (str, "mesh"),  # "mesh" | "ring"
    "net.base_latency_ms": (float, 50.0),
    "net.jitter_ms": (float, 0.0),
    "net.drop_prob": (float, 0.0),
    "net.partitions": (_parse_partitions, ()),

    "chain.consensus": (str, "pow"),  # "pow" | "pos"
    "chain.miners": (int, 3),
    "chain.hash_rates": (_parse_floats, ()),  # per miner; empty = all 1.0
    "chain.capacity_units": (int, 2500),
    "chain.tx_weight": (int, 250),
    "chain.block_reward": (int, 50),
    "chain.confirm_threshold": (int, 6),
    "chain.prune_keep_recent": (int, 0),  # 0 = keep everything
    "chain.fastsync_pivot_offset": (int, 1024),
    "chain.reorg_safety": (int, 128),
    "chain.accounts": (int, 20),
    "chain.genesis_amount": (int, 1_000_000),
    "chain.tx_rate_per_s": (float, 6.0),
    "chain.max_amount": (int, 5),

    "pow.mode": (str, "lottery"),  # "lottery" | "grind"
    "pow.difficulty_bits": (int, 3),
    "pow.target_interval_s": (float, 2.0),
    "pow.retarget_window": (int, 16),

    "pos.slot_interval_s": (float, 1.0),
    "pos.stakes": (_parse_ints, ()),  # one deposit per validator

    "lattice.accounts": (int, 12),
    "lattice.representatives": (int, 3),
    "lattice.genesis_amount": (int, 1_000_000),
    "lattice.spam_difficulty_bits": (int, 0),
    "lattice.quorum_fraction": (float, 0.5),
    "lattice.cement_delay_s": (float, 0.0),  # 0 = cementing off
    "lattice.gap_buffer": (int, 10_000),
    "lattice.send_rate_per_account_s": (float, 0.2),
    "lattice.max_amount": (int, 5),
    "lattice.offline_accounts": (int, 0),
    "lattice.tiers": (_parse_strs, ()),  # per node; empty = all historical

    "fork.interval_s": (float, 0.0),  # 0 = no injected conflicts
    "fork.attackers": (int, 0),
    "fork.delivery_latency_ms": (float, 20.0),
}

_VALID = {
    "scenario.paradigm": {"chain", "lattice"},
    "net.topology": {"mesh", "ring"},
    "chain.consensus": {"pow", "pos"},
    "pow.mode": {"lottery", "grind"},
}


@dataclass(frozen=True)
class Config:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str):
        return self.values[key]

    @property
    def scenario_id(self) -> str:
        return self.values["scenario.id"]

    @property
    def paradigm(self) -> str:
        return self.values["scenario.paradigm"]

    def snapshot_lines(self) -> list[str]:
        """The full effective config, one canonical line per key."""
        out = []
        for key in sorted(self.values):
            val = self.values[key]
            if isinstance(val, tuple) and val and isinstance(val[0], Partition):
                val = ";".join(
                    f"{p.start_s:g}-{p.end_s:g}:"
                    f"{','.join(str(i) for i in sorted(p.side_a))}|"
                    f"{','.join(str(i) for i in sorted(p.side_b))}"
                    for p in val)
            elif isinstance(val, tuple):
                val = ",".join(str(x) for x in val)
            out.append(f"{key} = {val}")
        return out


def _coerce(key: str, raw) -> object:
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key: {key}")
    parser, _ = SCHEMA[key]
    if isinstance(raw, str):
        try:
            value = parser(raw.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
    else:
        value = raw
    allowed = _VALID.get(key)
    if allowed and value not in allowed:
        raise ConfigError(
            f"bad value for {key}: {value!r} (expected one of {sorted(allowed)})")
    return value


def build_config(base: dict, overrides: list[str] = ()) -> Config:
    values = {}
    for key, (_, default) in SCHEMA.items():
        values[key] = default
    for key, raw in base.items():
        values[key] = _coerce(key, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), raw)
    missing = [k for k, v in values.items() if v is _MISSING]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(sorted(missing))}")
    _cross_validate(values)
    return Config(values=values)


def _cross_validate(values: dict) -> None:
    if values["scenario.horizon_s"] <= 0:
        raise ConfigError("scenario.horizon_s must be positive")
    if values["net.nodes"] < 1:
        raise ConfigError("net.nodes must be at least 1")
    if not 0 <= values["net.drop_prob"] < 1:
        raise ConfigError("net.drop_prob must lie in [0, 1)")
    if values["net.base_latency_ms"] < 0 or values["net.jitter_ms"] < 0:
        raise ConfigError("latency and jitter cannot be negative")
    if values["scenario.paradigm"] == "chain":
        _cross_validate_chain(values)
    else:
        _cross_validate_lattice(values)


def _cross_validate_chain(values: dict) -> None:
    if values["chain.miners"] < 1:
        raise ConfigError("chain.miners must be at least 1")
    if values["chain.miners"] > values["net.nodes"]:
        raise ConfigError("chain.miners cannot exceed net.nodes")
    rates = values["chain.hash_rates"]
    if rates and len(rates) != values["chain.miners"]:
        raise ConfigError("chain.hash_rates length must equal chain.miners")
    if rates and any(r < 0 for r in rates):
        raise ConfigError("chain.hash_rates cannot be negative")
    if values["chain.consensus"] == "pos":
        stakes = values["pos.stakes"]
        if not stakes:
            raise ConfigError("pos.stakes is required for pos consensus")
        if len(stakes) > values["net.nodes"]:
            raise ConfigError("more pos.stakes than nodes to host them")
        if values["pos.slot_interval_s"] <= 0:
            raise ConfigError("pos.slot_interval_s must be positive")
    else:
        bits = values["pow.difficulty_bits"]
        if not 0 <= bits <= 255:
            raise ConfigError("pow.difficulty_bits must lie in [0, 255]")
        if values["pow.mode"] == "grind" and bits > GRIND_BITS_LIMIT:
            raise ConfigError(
                f"pow.difficulty_bits above {GRIND_BITS_LIMIT} is not "
                f"searchable in grind mode")
        if values["pow.target_interval_s"] <= 0:
            raise ConfigError("pow.target_interval_s must be positive")
        if values["pow.retarget_window"] < 1:
            raise ConfigError("pow.retarget_window must be at least 1")
    if values["chain.tx_weight"] <= 0 or values["chain.capacity_units"] <= 0:
        raise ConfigError("chain capacity and weight must be positive")
    keep = values["chain.prune_keep_recent"]
    if keep and keep < values["chain.reorg_safety"]:
        raise ConfigError(
            "chain.prune_keep_recent must be 0 or at least chain.reorg_safety")


def _cross_validate_lattice(values: dict) -> None:
    if values["lattice.accounts"] < 2:
        raise ConfigError("lattice.accounts must be at least 2")
    if values["lattice.representatives"] < 1:
        raise ConfigError("lattice.representatives must be at least 1")
    if values["lattice.representatives"] > values["lattice.accounts"]:
        raise ConfigError("more representatives than accounts")
    if not 0 < values["lattice.quorum_fraction"] < 1:
        raise ConfigError("lattice.quorum_fraction must lie in (0, 1)")
    if values["lattice.spam_difficulty_bits"] > GRIND_BITS_LIMIT:
        raise ConfigError("lattice.spam_difficulty_bits too high for desk scale")
    tiers = values["lattice.tiers"]
    if tiers:
        if len(tiers) != values["net.nodes"]:
            raise ConfigError("lattice.tiers length must equal net.nodes")
        bad = [t for t in tiers if t not in ("historical", "current")]
        if bad:
            raise ConfigError(
                f"lattice.tiers entries must be historical or current, got {bad[0]!r}")
    if values["fork.interval_s"] > 0 and values["fork.attackers"] < 1:
        raise ConfigError("fork.interval_s needs fork.attackers >= 1")
    offline = values["lattice.offline_accounts"]
    if offline < 0 or offline >= values["lattice.accounts"]:
        raise ConfigError("lattice.offline_accounts must leave active accounts")


def parse_config_text(text: str) -> dict:
    """Raw key=value lines -> string dict; no schema checks yet."""
    out: dict[str, str] = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {ln}: expected key = value, got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"line {ln}: duplicate key {key}")
        out[key] = raw.strip()
    return out


def load_config(path: str, overrides: list[str] = ()) -> Config:
    with open(path, "r", encoding="utf-8") as fh:
        base = parse_config_text(fh.read())
    return build_config(base, overrides)


# ---------------------------------------------------------------------------
# Presets

PRESETS: dict[str, dict] = {
    # Lottery mining tuned to a 2 s target; saturated mempool, mild forking.
    "bitcoin-baseline": {
        "scenario.id": "bitcoin-baseline",
        "scenario.paradigm": "chain",
        "scenario.horizon_s": 560.0,
        "net.nodes": 4,
        "net.base_latency_ms": 100.0,
        "net.jitter_ms": 20.0,
        "chain.miners": 3,
        "chain.capacity_units": 2500,
        "chain.tx_weight": 250,
        "chain.tx_rate_per_s": 6.0,
        "pow.mode": "lottery",
        "pow.difficulty_bits": 3,
        "pow.target_interval_s": 2.0,
    },
    # Same engine, smaller blocks arriving faster.
    "ethereum-baseline": {
        "scenario.id": "ethereum-baseline",
        "scenario.paradigm": "chain",
        "scenario.horizon_s": 300.0,
        "net.nodes": 4,
        "net.base_latency_ms": 100.0,
        "net.jitter_ms": 20.0,
        "chain.miners": 3,
        "chain.capacity_units": 210_000,
        "chain.tx_weight": 21_000,
        "chain.block_reward": 5,
        "chain.tx_rate_per_s": 12.0,
        "pow.mode": "lottery",
        "pow.difficulty_bits": 2,
        "pow.target_interval_s": 1.0,
    },
    # Stake-weighted slot leaders instead of work.
    "pos-baseline": {
        "scenario.id": "pos-baseline",
        "scenario.paradigm": "chain",
        "scenario.horizon_s": 200.0,
        "net.nodes": 5,
        "net.base_latency_ms": 50.0,
        "chain.consensus": "pos",
        "chain.miners": 4,
        "chain.capacity_units": 2500,
        "chain.tx_weight": 250,
        "chain.block_reward": 10,
        "chain.tx_rate_per_s": 6.0,
        "pos.slot_interval_s": 1.0,
        "pos.stakes": "100,200,300,400",
    },
    # Block lattice at rest: steady small transfers, no adversary.
    "nano-baseline": {
        "scenario.id": "nano-baseline",
        "scenario.paradigm": "lattice",
        "scenario.horizon_s": 120.0,
        "net.nodes": 6,
        "net.base_latency_ms": 50.0,
        "net.jitter_ms": 10.0,
        "lattice.accounts": 12,
        "lattice.representatives": 3,
        "lattice.spam_difficulty_bits": 4,
        "lattice.send_rate_per_account_s": 0.2,
        "lattice.offline_accounts": 1,
    },
    # Ledger growth and throughput as the account population widens;
    # sweep lattice.accounts via --override.
    "nano-scaling": {
        "scenario.id": "nano-scaling",
        "scenario.paradigm": "lattice",
        "scenario.horizon_s": 80.0,
        "net.nodes": 6,
        "net.base_latency_ms": 50.0,
        "lattice.accounts": 10,
        "lattice.representatives": 3,
        "lattice.spam_difficulty_bits": 0,
        "lattice.send_rate_per_account_s": 0.25,
        "lattice.tiers": "historical,historical,historical,historical,historical,current",
    },
    # Deliberate equivocation under a split delivery schedule.
    "fork-stress": {
        "scenario.id": "fork-stress",
        "scenario.paradigm": "lattice",
        "scenario.horizon_s": 100.0,
        "net.nodes": 6,
        "net.base_latency_ms": 50.0,
        "net.jitter_ms": 10.0,
        "lattice.accounts": 12,
        "lattice.representatives": 3,
        "lattice.spam_difficulty_bits": 2,
        "lattice.send_rate_per_account_s": 0.1,
        "fork.interval_s": 10.0,
        "fork.attackers": 2,
        "fork.delivery_latency_ms": 20.0,
    },
    # A healed network split and the reorg that follows it.
    "partition-stress": {
        "scenario.id": "partition-stress",
        "scenario.paradigm": "chain",
        "scenario.horizon_s": 120.0,
        "net.nodes": 4,
        "net.base_latency_ms": 100.0,
        "net.partitions": "30-60:0,1|2,3",
        "chain.miners": 4,
        "chain.capacity_units": 2500,
        "chain.tx_weight": 250,
        "chain.tx_rate_per_s": 4.0,
        "pow.mode": "lottery",
        "pow.difficulty_bits": 3,
        "pow.target_interval_s": 2.0,
    },
}


def preset_config(name: str, overrides: list[str] = ()) -> Config:
    if name not in PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return build_config(PRESETS[name], overrides)
