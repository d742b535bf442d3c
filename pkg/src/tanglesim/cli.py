"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime error. Diagnostics
go to stderr; CSV data goes only to ``--out`` (stdout when omitted or ``-``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import FPC, TANGLE, Experiment, load_experiment
from .errors import ConfigError, TangleSimError
from .experiments import SweepRow, run_fpc_experiment, run_fpc_sweep
from .fpc import FpcConfig
from .metrics import MetricsRow, format_value
from .scenario import run_tangle_scenario

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

FPC_COLUMNS = [
    "N", "k", "q", "p0", "tau", "beta", "l", "M", "seed", "runs",
    "agreement_rate", "mean_termination_round", "not_finalized_rate",
]
TANGLE_COLUMNS = ["tps", "mean_confirmation_time", "orphan_rate", "conflicts_resolved"]

COMMANDS = ("fpc-sweep", "fpc-run", "tangle-run", "validate-config", "version")


@dataclass
class CliInvocation:
    command: str
    config_path: str | None = None
    overrides: list[str] = field(default_factory=list)
    output_path: str | None = None
    seed: int | None = None
    runs: int | None = None
    jobs: int = 1
    trace_path: str | None = None


def fpc_row(config: FpcConfig, runs: int, metrics: MetricsRow | None, point=None) -> list[str]:
    """One CSV row; ``point`` overrides (N, k, q) for rows whose config was infeasible."""
    m = metrics or MetricsRow()
    n, k, q = point or (config.n_nodes, config.quorum_size, config.adversary_fraction)
    values = [
        n, k, q,
        config.initial_like_fraction, config.first_threshold, config.threshold_margin,
        config.finalization_streak, config.max_rounds, config.seed, runs,
        m.agreement_rate, m.mean_termination_round, m.not_finalized_rate,
    ]
    return [format_value(v) for v in values]


def tangle_row(metrics: MetricsRow) -> list[str]:
    values = [metrics.tps, metrics.mean_confirmation_time, metrics.orphan_rate, metrics.conflicts_resolved]
    return [format_value(v) for v in values]


def render_csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _emit(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8", newline="\n")


def _echo_config(exp: Experiment, output_path: str | None) -> None:
    """Write the fully resolved config next to the CSV for provenance."""
    if output_path is None or output_path == "-":
        return
    out = Path(output_path)
    target = out.with_name(out.stem + ".config.json")
    target.write_text(json.dumps(exp.resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load(inv: CliInvocation, kind: str | None) -> Experiment:
    overrides = list(inv.overrides)
    if inv.seed is not None:
        overrides.append(f"seed={inv.seed}")
    if inv.runs is not None and kind == FPC:
        overrides.append(f"runs={inv.runs}")
    return load_experiment(inv.config_path, overrides, kind=kind)


def _sweep_rows(rows: Sequence[SweepRow], base: FpcConfig) -> list[list[str]]:
    out = []
    for row in rows:
        p = row.point
        if row.config is None:
            print(f"warning: grid point N={p.n_nodes} k={p.quorum_size} q={p.adversary_fraction}: {row.error}",
                  file=sys.stderr)
        out.append(fpc_row(base, row.runs, row.metrics, (p.n_nodes, p.quorum_size, p.adversary_fraction)))
    return out


def dispatch(inv: CliInvocation) -> int:
    try:
        if inv.command == "version":
            print(f"tanglesim {__version__}")
            return EXIT_OK
        if inv.command == "validate-config":
            exp = _load(inv, None)
            print(f"ok: valid {exp.kind} config", file=sys.stderr)
            return EXIT_OK
        if inv.command in ("fpc-run", "fpc-sweep"):
            exp = _load(inv, FPC)
            if inv.command == "fpc-run":
                metrics = run_fpc_experiment(exp.config, exp.runs)
                rows = [fpc_row(exp.config, exp.runs, metrics)]
            else:
                result = run_fpc_sweep(exp.grid_points(), exp.config, exp.runs, inv.jobs)
                rows = _sweep_rows(result, exp.config)
            _emit(render_csv(FPC_COLUMNS, rows), inv.output_path)
            _echo_config(exp, inv.output_path)
            return EXIT_OK
        if inv.command == "tangle-run":
            exp = _load(inv, TANGLE)
            result = run_tangle_scenario(exp.config)
            _emit(render_csv(TANGLE_COLUMNS, [tangle_row(result.metrics)]), inv.output_path)
            trace_path = inv.trace_path
            if trace_path is None and inv.output_path not in (None, "-"):
                out = Path(inv.output_path)
                trace_path = str(out.with_name(out.stem + ".trace"))
            if trace_path is not None:
                _emit("".join(line + "\n" for line in result.trace), trace_path)
            _echo_config(exp, inv.output_path)
            return EXIT_OK
        print(f"error: unknown command {inv.command}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TangleSimError, OSError, ValueError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tanglesim", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", dest="config_path", metavar="PATH", help="JSON config file")
    parser.add_argument("--out", dest="output_path", metavar="PATH", help="CSV output path (default stdout)")
    parser.add_argument("--seed", type=_u64, help="override the config seed")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, repeatable")
    parser.add_argument("--runs", type=_positive, help="FPC runs per grid point")
    parser.add_argument("--jobs", type=_positive, default=1, help="parallel sweep workers")
    parser.add_argument("--trace", dest="trace_path", metavar="PATH",
                        help="tangle-run trace path (default: next to --out)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return dispatch(CliInvocation(**vars(args)))


if __name__ == "__main__":
    sys.exit(main())
