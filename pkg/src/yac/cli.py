"""``yac-sim`` command line.

Exit status: 0 on success, 1 for a configuration error, 2 when a run
detected an invariant violation (safety, round lag or negative balance).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from .harness import (
    SWEEP_DELAYS_MS,
    SWEEP_PEERS,
    load_scenario,
    report,
    run_scenario,
    run_sweep,
    scenario_names,
    sweep_csv,
    sweep_grid,
)
from .scenario import ConfigError, ScenarioConfig, parse_kv

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION = 0, 1, 2

# flag dest -> scenario file key
_KEYS = {
    "byzantine": "byzantine",
    "batch_limit": "batch_limit",
    "batch_timeout_ms": "batch_timeout_ms",
    "tx_rate": "tx_rate",
    "tx_count": "tx_count",
    "duration_s": "duration_s",
    "latency_us": "latency_us",
    "jitter_us": "jitter_us",
    "drop_rate": "drop_rate",
    "proc_base_us": "proc_base_us",
    "proc_sig_us": "proc_sig_us",
    "slow_fraction": "slow_fraction",
    "slow_factor": "slow_factor",
    "seed": "seed",
    "trials": "trials",
}

_MEDIAN_NOTE = (
    "Each sweep cell reports the median throughput over its trials; with an even "
    "trial count this is the lower median (the value at 0-based index trials/2 - 1 "
    "after sorting). Trial t uses seed SEED+t. A peer counts as stalled when its "
    "final height is below the highest final height minus one."
)


def _common(p: argparse.ArgumentParser, listy: bool):
    p.add_argument("--scenario", metavar="NAME|PATH",
                   help="canned scenario name or key=value scenario file to start from")
    if listy:
        p.add_argument("--peers", metavar="N[,N...]", help="network sizes (default: %s)"
                       % ",".join(map(str, SWEEP_PEERS)))
        p.add_argument("--vote-delay-ms", metavar="MS[,MS...]", help="vote step delays (default: %s)"
                       % ",".join(map(str, SWEEP_DELAYS_MS)))
    else:
        p.add_argument("--peers", type=int, metavar="N", help="number of peers")
        p.add_argument("--vote-delay-ms", type=float, metavar="MS", help="vote step delay")
    p.add_argument("--byzantine", type=int, metavar="F", help="number of byzantine peers (the last F)")
    p.add_argument("--behavior", action="append", default=[], metavar="[IDX=]KIND",
                   help="honest, silent, equivocator, delayed[:K], crash:T_US or divergent; repeatable")
    p.add_argument("--batch-limit", type=int, metavar="N")
    p.add_argument("--batch-timeout-ms", type=float, metavar="MS")
    p.add_argument("--tx-rate", type=float, metavar="TPS", help="client transactions per simulated second")
    p.add_argument("--tx-count", type=int, metavar="N", help="stop submitting after N transactions")
    p.add_argument("--duration-s", type=float, metavar="S", help="simulated seconds")
    p.add_argument("--latency-us", metavar="LO[:HI]", help="per-link base latency, fixed or a uniform range")
    p.add_argument("--jitter-us", type=int, metavar="US")
    p.add_argument("--drop-rate", type=float, metavar="P")
    p.add_argument("--partition", action="append", default=[], metavar="SPEC",
                   help="A|B@START-END in peer indices and microseconds, e.g. 1|0,2,3@0-500000; repeatable")
    p.add_argument("--proc-base-us", type=int, metavar="US", help="processing cost per message")
    p.add_argument("--proc-sig-us", type=int, metavar="US", help="processing cost per verified signature")
    p.add_argument("--slow-fraction", type=float, metavar="F", help="share of peers on slow machines")
    p.add_argument("--slow-factor", type=float, metavar="X", help="cost multiplier for slow peers")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # Bad flags are configuration errors too.
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="yac-sim",
        description="Simulate YAC consensus on a deterministic virtual network.",
        epilog=_MEDIAN_NOTE,
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_run = sub.add_parser("run", help="run one scenario and print a per-peer report",
                           epilog=_MEDIAN_NOTE)
    _common(p_run, listy=False)
    p_run.add_argument("--out", metavar="FILE", help="write the event trace here")

    p_sweep = sub.add_parser("sweep", help="sweep network size x vote step delay, CSV output",
                             description="Run every (peers, delay) cell for --trials seeds and "
                                         "write one CSV row per cell.",
                             epilog=_MEDIAN_NOTE)
    _common(p_sweep, listy=True)
    p_sweep.add_argument("--out", metavar="FILE", help="write the CSV here instead of stdout")
    p_sweep.add_argument("--jobs", type=int, default=1, metavar="N",
                         help="worker processes; output is identical for any value")

    sub.add_parser("scenarios", help="list canned scenarios")
    return parser


def _overrides(args: argparse.Namespace, base: ScenarioConfig, listy: bool) -> ScenarioConfig:
    lines = []
    if not listy:
        if args.peers is not None:
            lines.append(f"peers = {args.peers}")
        if args.vote_delay_ms is not None:
            lines.append(f"vote_delay_ms = {args.vote_delay_ms}")
    for dest, key in _KEYS.items():
        value = getattr(args, dest)
        if value is not None:
            lines.append(f"{key} = {value}")
    lines.extend(f"behavior = {b}" for b in args.behavior)
    lines.extend(f"partition = {p}" for p in args.partition)
    return parse_kv("\n".join(lines), base).validate()


def _int_list(text: Optional[str], default) -> list[int]:
    if text is None:
        return list(default)
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from None


def _float_list(text: Optional[str], default) -> list[float]:
    if text is None:
        return list(default)
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _cmd_run(args) -> int:
    base = load_scenario(args.scenario) if args.scenario else ScenarioConfig()
    cfg = _overrides(args, base, listy=False)
    result = run_scenario(cfg, Path(args.out) if args.out else None)
    sys.stdout.write(report(result))
    return EXIT_VIOLATION if result.violations else EXIT_OK


def _cmd_sweep(args) -> int:
    base = load_scenario(args.scenario or "sweep-base")
    base = _overrides(args, base, listy=True)
    peers = _int_list(args.peers, SWEEP_PEERS)
    delays = _float_list(args.vote_delay_ms, SWEEP_DELAYS_MS)
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    cells = run_sweep(sweep_grid(base, peers, delays), jobs=args.jobs)
    text = sweep_csv(cells)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    bad = sum(c.violations for c in cells)
    if bad:
        print(f"yac-sim: {bad} invariant violation(s) during the sweep", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "scenarios":
            for name in scenario_names():
                print(name)
            return EXIT_OK
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_sweep(args)
    except ConfigError as exc:
        print(f"yac-sim: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
