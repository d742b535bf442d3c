"""Deterministic simulator and protocol library for a DAG-based ledger.

Covers message encoding, a reality-based UTXO ledger, the Tangle with
uniform tip selection and approval-weight confirmation, FPC voting, mana,
adaptive PoW, a discrete-event scenario harness, and a CLI.
"""

__version__ = "0.1.0"

from .errors import TangleSimError
from .experiments import run_fpc_experiment, run_fpc_sweep
from .fpc import FpcConfig, run_fpc
from .metrics import MetricsRow
from .scenario import ScenarioConfig, run_tangle_scenario

__all__ = [
    "FpcConfig",
    "MetricsRow",
    "ScenarioConfig",
    "TangleSimError",
    "__version__",
    "run_fpc",
    "run_fpc_experiment",
    "run_fpc_sweep",
    "run_tangle_scenario",
]
