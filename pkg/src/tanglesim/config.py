"""JSON config loading with dotted overrides and strict key checking.

Two document kinds exist. FPC documents use the short keys ``N``, ``k``,
``q``, ``p0``, ``tau``, ``beta``, ``l``, ``M`` plus ``runs`` and ``grid``;
scenario documents use camelCase keys (``issueRate``, ``pow.gamma``, ...).
The kind is taken from an optional ``"type"`` key or inferred from the keys
present. The schema for both lives in ``schema/config.schema.json``.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .errors import ConfigError, InvariantViolation, ParseError, UnknownKey
from .experiments import DEFAULT_GRIDS, FULL_QUORUM, GridPoint, SweepGrid
from .fpc import CONFIG_KEYS, AdversaryStrategy, FpcConfig
from .ratecontrol import PowParams
from .scenario import DoubleSpend, GenesisOutput, ScenarioConfig, genesis_ref, node_address
from .utxo import OutputRef

SCHEMA_PATH = Path(__file__).with_name("schema") / "config.schema.json"

FPC = "fpc"
TANGLE = "tangle"

FPC_DEFAULT_RUNS = 200

_FPC_TOP = set(CONFIG_KEYS) | {"runs", "grid", "type"}
_GRID_KEYS = {"N", "k", "q"}

_SCENARIO_FIELDS = {
    "nodes": "nodes",
    "issueRate": "issue_rate",
    "issueRates": "issue_rates",
    "duration": "duration",
    "eligibilityAge": "eligibility_age",
    "confirmationThreshold": "confirmation_threshold",
    "propagationDelay": "propagation_delay",
    "tipPoolTarget": "tip_pool_target",
    "sweepInterval": "sweep_interval",
    "seed": "seed",
}
_POW_FIELDS = {
    "baseDifficulty": "base_difficulty",
    "gamma": "gamma",
    "windowSeconds": "window",
    "hashRate": "hash_rate",
    "countAttempts": "count_attempts",
}
_MANA_KEYS = {"halfLife", "access", "consensus"}
_SCHEDULER_KEYS = {"budget"}
_SCENARIO_TOP = set(_SCENARIO_FIELDS) | {
    "mana", "pow", "scheduler", "genesis", "doubleSpendSchedule", "type",
}


@dataclass(frozen=True)
class Experiment:
    """A loaded document: the validated config plus its resolved JSON form."""

    kind: str
    config: FpcConfig | ScenarioConfig
    resolved: dict
    runs: int = 1
    grid: tuple[SweepGrid, ...] = ()

    def grid_points(self) -> list[GridPoint]:
        return [p for g in self.grid for p in g.points()]


# ------------------------------------------------------------------ helpers


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(doc: dict, assignment: str) -> None:
    """Apply one ``dotted.key=value``; the value is JSON if it parses as JSON."""
    key, sep, raw = assignment.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ParseError(f"override {assignment!r} is not key=value")
    parts = key.split(".")
    node = doc
    for part in parts[:-1]:
        nxt = node.get(part)
        if nxt is None:
            nxt = node[part] = {}
        if not isinstance(nxt, dict):
            raise ParseError(f"override {key}: {part} is not an object")
        node = nxt
    node[parts[-1]] = _parse_value(raw)


def _reject_unknown(section: dict, allowed: set[str], prefix: str = "") -> None:
    for key in section:
        if key not in allowed:
            raise UnknownKey(prefix + key)


def _number(doc: dict, key: str, label: str, integer: bool = False):
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvariantViolation(label, "must be a number")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise InvariantViolation(label, "must be an integer")
        return int(value)
    if not math.isfinite(value):
        raise InvariantViolation(label, "must be finite")
    return float(value)


def _float_list(value, label: str, length: int | None = None) -> tuple[float, ...]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if length is None:
            raise InvariantViolation(label, "must be a list")
        return (float(value),) * length
    if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
        raise InvariantViolation(label, "must be a number or a list of numbers")
    return tuple(float(v) for v in value)


def infer_kind(doc: dict) -> str:
    kind = doc.get("type")
    if kind is not None:
        if kind not in (FPC, TANGLE):
            raise InvariantViolation("type", "type ∈ {fpc, tangle}")
        return kind
    keys = set(doc) - {"seed"}
    if keys & (_FPC_TOP - {"seed", "type", "mana"}):
        return FPC
    if keys & (_SCENARIO_TOP - {"seed", "type", "mana"}):
        return TANGLE
    raise ParseError('cannot tell the config kind; add "type": "fpc" or "tangle"')


# ---------------------------------------------------------------------- FPC


def _parse_grid(value) -> tuple[SweepGrid, ...]:
    entries = value if isinstance(value, list) else [value]
    grids = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise InvariantViolation(f"grid[{i}]", "grid entries are objects")
        _reject_unknown(entry, _GRID_KEYS, f"grid[{i}].")
        missing = _GRID_KEYS - set(entry)
        if missing:
            raise InvariantViolation(f"grid[{i}].{sorted(missing)[0]}", "every grid axis needs a list")
        axes = {}
        for axis in ("N", "k", "q"):
            vals = entry[axis] if isinstance(entry[axis], list) else [entry[axis]]
            if not vals:
                raise InvariantViolation(f"grid[{i}].{axis}", "axis must not be empty")
            for v in vals:
                ok = (axis == "k" and v == FULL_QUORUM) or (
                    not isinstance(v, bool) and isinstance(v, (int, float))
                )
                if not ok:
                    raise InvariantViolation(f"grid[{i}].{axis}", "numbers only (k also accepts \"N-1\")")
            axes[axis] = tuple(vals)
        grids.append(SweepGrid(
            tuple(int(n) for n in axes["N"]),
            tuple(k if k == FULL_QUORUM else int(k) for k in axes["k"]),
            tuple(float(q) for q in axes["q"]),
        ))
    return tuple(grids)


def _grid_to_json(grid: SweepGrid) -> dict:
    return {"N": list(grid.n_values), "k": list(grid.quorum_sizes), "q": list(grid.adversary_fractions)}


def build_fpc(doc: dict) -> Experiment:
    _reject_unknown(doc, _FPC_TOP)
    kwargs: dict[str, Any] = {"n_nodes": 100, "quorum_size": 20}
    int_keys = {"N", "k", "l", "M", "seed"}
    for key, field_name in CONFIG_KEYS.items():
        if key not in doc:
            continue
        if key == "manaWeighting":
            if not isinstance(doc[key], bool):
                raise InvariantViolation(key, "must be true or false")
            kwargs[field_name] = doc[key]
        elif key == "adversaryStrategy":
            try:
                kwargs[field_name] = AdversaryStrategy(doc[key])
            except ValueError:
                names = ", ".join(s.value for s in AdversaryStrategy)
                raise InvariantViolation(key, f"one of {names}") from None
        elif key == "mana":
            kwargs[field_name] = None if doc[key] is None else _float_list(doc[key], key)
        else:
            kwargs[field_name] = _number(doc, key, key, integer=key in int_keys)
    runs = _number(doc, "runs", "runs", integer=True) if "runs" in doc else FPC_DEFAULT_RUNS
    if runs < 1:
        raise InvariantViolation("runs", "runs ≥ 1")
    grid = _parse_grid(doc["grid"]) if "grid" in doc else tuple(DEFAULT_GRIDS.values())
    config = FpcConfig(**kwargs)
    resolved = {"type": FPC}
    for key, field_name in CONFIG_KEYS.items():
        value = getattr(config, field_name)
        if isinstance(value, AdversaryStrategy):
            value = value.value
        elif isinstance(value, tuple):
            value = list(value)
        resolved[key] = value
    resolved["runs"] = runs
    resolved["grid"] = [_grid_to_json(g) for g in grid]
    return Experiment(FPC, config, resolved, runs, grid)


# ----------------------------------------------------------------- scenario


def _parse_output_ref(value, label: str) -> OutputRef:
    if isinstance(value, int) and not isinstance(value, bool):
        if value < 0:
            raise InvariantViolation(label, "genesis output index ≥ 0")
        return genesis_ref(value)
    if isinstance(value, str):
        tx_hex, sep, idx = value.partition(":")
        try:
            tx_id = bytes.fromhex(tx_hex)
            index = int(idx)
        except ValueError:
            tx_id, index = b"", -1
        if sep and len(tx_id) == 32 and index >= 0:
            return OutputRef(tx_id, index)
    raise InvariantViolation(label, 'genesis output index or "<txid hex>:<index>"')


def build_scenario(doc: dict) -> Experiment:
    _reject_unknown(doc, _SCENARIO_TOP)
    kwargs: dict[str, Any] = {}
    int_keys = {"nodes", "tipPoolTarget", "seed"}
    for key, field_name in _SCENARIO_FIELDS.items():
        if key not in doc:
            continue
        if key == "issueRates":
            kwargs[field_name] = None if doc[key] is None else _float_list(doc[key], key)
        else:
            kwargs[field_name] = _number(doc, key, key, integer=key in int_keys)
    nodes = kwargs.get("nodes", 10)

    pow_doc = doc.get("pow", {})
    if not isinstance(pow_doc, dict):
        raise InvariantViolation("pow", "must be an object")
    _reject_unknown(pow_doc, set(_POW_FIELDS), "pow.")
    pow_kwargs = {}
    for key, field_name in _POW_FIELDS.items():
        if key not in pow_doc:
            continue
        if key == "countAttempts":
            if not isinstance(pow_doc[key], bool):
                raise InvariantViolation("pow.countAttempts", "must be true or false")
            pow_kwargs[field_name] = pow_doc[key]
        else:
            pow_kwargs[field_name] = _number(pow_doc, key, "pow." + key, integer=key == "baseDifficulty")
    for field_name, label, ok, rule in (
        ("base_difficulty", "pow.baseDifficulty", lambda v: v >= 0, "d0 ≥ 0"),
        ("gamma", "pow.gamma", lambda v: v >= 0, "gamma ≥ 0"),
        ("window", "pow.windowSeconds", lambda v: v > 0, "window > 0"),
        ("hash_rate", "pow.hashRate", lambda v: v > 0, "hash rate > 0"),
    ):
        if field_name in pow_kwargs and not ok(pow_kwargs[field_name]):
            raise InvariantViolation(label, rule)
    kwargs["pow"] = PowParams(**pow_kwargs)

    sched = doc.get("scheduler", {})
    if not isinstance(sched, dict):
        raise InvariantViolation("scheduler", "must be an object")
    _reject_unknown(sched, _SCHEDULER_KEYS, "scheduler.")
    if sched.get("budget") is not None:
        kwargs["scheduler_budget"] = _number(sched, "budget", "scheduler.budget")

    mana = doc.get("mana", {})
    if not isinstance(mana, dict):
        raise InvariantViolation("mana", "must be an object")
    _reject_unknown(mana, _MANA_KEYS, "mana.")
    if "halfLife" in mana:
        hl = mana["halfLife"]
        kwargs["half_life"] = math.inf if hl is None else _number(mana, "halfLife", "mana.halfLife")
    for key, field_name in (("access", "access_mana"), ("consensus", "consensus_mana")):
        if mana.get(key) is not None:
            kwargs[field_name] = _float_list(mana[key], "mana." + key, nodes)

    if doc.get("genesis") is not None:
        if not isinstance(doc["genesis"], list):
            raise InvariantViolation("genesis", "must be a list")
        outs = []
        for i, entry in enumerate(doc["genesis"]):
            label = f"genesis[{i}]"
            if not isinstance(entry, dict):
                raise InvariantViolation(label, "entries are objects")
            _reject_unknown(entry, {"address", "owner", "amount"}, label + ".")
            if "amount" not in entry:
                raise InvariantViolation(label + ".amount", "required")
            amount = _number(entry, "amount", label + ".amount", integer=True)
            if ("address" in entry) == ("owner" in entry):
                raise InvariantViolation(label, "exactly one of address or owner")
            if "owner" in entry:
                owner = _number(entry, "owner", label + ".owner", integer=True)
                if not 0 <= owner < nodes:
                    raise InvariantViolation(label + ".owner", "owner is a node index")
                address = node_address(owner)
            else:
                try:
                    address = bytes.fromhex(entry["address"])
                except (TypeError, ValueError):
                    address = b""
                if len(address) != 32:
                    raise InvariantViolation(label + ".address", "64 hex characters")
            outs.append(GenesisOutput(address, amount))
        kwargs["genesis"] = tuple(outs)

    schedule = doc.get("doubleSpendSchedule") or []
    if not isinstance(schedule, list):
        raise InvariantViolation("doubleSpendSchedule", "must be a list")
    entries = []
    for i, entry in enumerate(schedule):
        label = f"doubleSpendSchedule[{i}]"
        if not isinstance(entry, dict):
            raise InvariantViolation("doubleSpendSchedule", "entries are objects")
        _reject_unknown(entry, {"time", "output", "spenders"}, label + ".")
        for req in ("time", "output", "spenders"):
            if req not in entry:
                raise InvariantViolation(f"{label}.{req}", "required")
        spenders = entry["spenders"]
        if (
            not isinstance(spenders, list)
            or len(spenders) != 2
            or any(isinstance(s, bool) or not isinstance(s, int) for s in spenders)
        ):
            raise InvariantViolation("doubleSpendSchedule", "spenders are two node indices")
        entries.append(DoubleSpend(
            _number(entry, "time", label + ".time"),
            _parse_output_ref(entry["output"], label + ".output"),
            (spenders[0], spenders[1]),
        ))
    kwargs["double_spend_schedule"] = tuple(entries)

    config = ScenarioConfig(**kwargs)
    genesis = config.resolved_genesis()
    for i, ds in enumerate(config.double_spend_schedule):
        if ds.output == genesis_ref(ds.output.index) and ds.output.index >= len(genesis):
            raise InvariantViolation("doubleSpendSchedule", f"entry {i} spends a nonexistent genesis output")
    return Experiment(TANGLE, config, scenario_to_json(config))


def _ref_to_json(ref: OutputRef):
    return ref.index if ref == genesis_ref(ref.index) else str(ref)


def scenario_to_json(config: ScenarioConfig) -> dict:
    out: dict[str, Any] = {"type": TANGLE}
    for key, field_name in _SCENARIO_FIELDS.items():
        value = getattr(config, field_name)
        out[key] = list(value) if isinstance(value, tuple) else value
    out["mana"] = {
        "halfLife": None if math.isinf(config.half_life) else config.half_life,
        "access": list(config.access_mana) if config.access_mana is not None else None,
        "consensus": list(config.consensus_mana) if config.consensus_mana is not None else None,
    }
    out["pow"] = {key: getattr(config.pow, f) for key, f in _POW_FIELDS.items()}
    out["scheduler"] = {"budget": config.scheduler_budget}
    out["genesis"] = [{"address": g.address.hex(), "amount": g.amount} for g in config.resolved_genesis()]
    out["doubleSpendSchedule"] = [
        {"time": ds.time, "output": _ref_to_json(ds.output), "spenders": list(ds.spenders)}
        for ds in config.double_spend_schedule
    ]
    return out


# ------------------------------------------------------------------ loading


def read_document(path: str | Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    return doc


def load_experiment(
    path: str | Path | None,
    overrides: Sequence[str] = (),
    kind: str | None = None,
    document: dict | None = None,
) -> Experiment:
    """Parse, apply overrides, fill defaults and check every invariant."""
    doc = copy.deepcopy(document) if document is not None else read_document(path) if path else {}
    for assignment in overrides:
        apply_override(doc, assignment)
    found = kind or infer_kind(doc)
    if "type" in doc and doc["type"] != found:
        raise InvariantViolation("type", f"this command expects a {found} config")
    if found == FPC:
        return build_fpc(doc)
    return build_scenario(doc)


def load_config(path, overrides: Sequence[str] = ()) -> FpcConfig | ScenarioConfig:
    return load_experiment(path, overrides).config


__all__ = [
    "ConfigError",
    "Experiment",
    "FPC",
    "TANGLE",
    "apply_override",
    "load_config",
    "load_experiment",
    "read_document",
    "scenario_to_json",
]
