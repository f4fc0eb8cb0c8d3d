"""Deterministic simulation lab for two ledger paradigms.

One engine, two protocol stacks: a longest-chain blockchain (work lottery,
hash grinding, or stake slots) and a block-lattice ledger where every account
owns its own chain and representatives vote forks down. Everything runs on a
seeded discrete-event network so a scenario re-run is byte-identical.
"""

from .codec import CodecError
from .errors import ConfigError, InvariantViolation, LedgerError, NotFoundError
from .lattice import InsufficientBalanceError
from .leader_election import MiningBudgetError, SlashRejectedError
from .metrics import (
    WrongParadigmError,
    ZeroCapacityError,
    build_report,
    render_report,
    run_scenario_suite,
    tps_cap,
)
from .runner import RunResult, run
from .scenario import Config, build_config, load_config, preset_config

__version__ = "0.1.0"

__all__ = [
    "CodecError",
    "Config",
    "ConfigError",
    "InsufficientBalanceError",
    "InvariantViolation",
    "LedgerError",
    "MiningBudgetError",
    "NotFoundError",
    "RunResult",
    "SlashRejectedError",
    "WrongParadigmError",
    "ZeroCapacityError",
    "build_config",
    "build_report",
    "load_config",
    "preset_config",
    "render_report",
    "run",
    "run_scenario_suite",
    "tps_cap",
    "__version__",
]
