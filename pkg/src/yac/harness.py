"""Experiment runner: canned scenarios, single runs and delay sweeps."""
from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

from .netsim import SimResult, run
from .scenario import (
    Behavior,
    ConfigError,
    NetworkModel,
    Partition,
    ScenarioConfig,
    load_scenario_file,
)

CSV_COLUMNS = (
    "n_peers", "vote_step_delay_ms", "trial_count", "median_throughput",
    "stalled_peers_total", "seed_base",
)
SWEEP_PEERS = (4, 16, 28, 64)
SWEEP_DELAYS_MS = (1, 20, 100, 500)

# Wide-area links with 50-120 ms one-way latency. Signature checks cost real
# time and a quarter of the peers run on much slower machines, which is what
# lets a flood of votes knock some of them behind.
SWEEP_NETWORK = NetworkModel(
    base_latency=50_000,
    latency_max=120_000,
    proc_base=100,
    proc_per_sig=60,
    slow_fraction=0.25,
    slow_factor=12.0,
)


def _sweep_base() -> ScenarioConfig:
    return ScenarioConfig(
        name="sweep-base", n_peers=4, vote_step_delay=1_000, batch_limit=10,
        batch_timeout=100_000, tx_rate=200.0, duration_s=5.0, network=SWEEP_NETWORK,
        seed=1, trials=10,
    )


def _happy() -> ScenarioConfig:
    return ScenarioConfig(
        name="happy-4", n_peers=4, vote_step_delay=100_000, batch_limit=4,
        tx_rate=1000.0, tx_count=4, duration_s=2.0,
        network=NetworkModel(base_latency=10_000),
    )


def _bob() -> ScenarioConfig:
    # Bob is cut off while the others vote and commit, so he misses the commit
    # broadcast; once the link heals his next vote is answered with the commit.
    return ScenarioConfig(
        name="bob-partition", n_peers=4, vote_step_delay=100_000, batch_limit=4,
        tx_rate=1000.0, tx_count=4, duration_s=2.0,
        network=NetworkModel(base_latency=10_000, partitions=(
            Partition(frozenset({1}), frozenset({0, 2, 3}), 0, 150_000),)),
        peer_names=("alice", "bob", "clara", "deana"),
    )


def _reject() -> ScenarioConfig:
    # Every peer keeps a different slice of the proposal, so four distinct
    # block hashes compete and none can reach the threshold.
    divergent = Behavior("divergent")
    return ScenarioConfig(
        name="reject-divergence", n_peers=4, vote_step_delay=50_000, batch_limit=4,
        tx_rate=1000.0, tx_count=4, duration_s=2.0,
        behaviors=tuple((i, divergent) for i in range(4)),
        network=NetworkModel(base_latency=10_000),
    )


def _faulty(name: str, kind: str) -> Callable[[], ScenarioConfig]:
    def build() -> ScenarioConfig:
        return ScenarioConfig(
            name=name, n_peers=4, behaviors=((3, Behavior.parse(kind)),),
            vote_step_delay=50_000, batch_limit=5, tx_rate=50.0, tx_count=50, duration_s=5.0,
            network=NetworkModel(base_latency=5_000, latency_max=20_000, jitter=1_000),
        )
    return build


SCENARIOS: dict[str, Callable[[], ScenarioConfig]] = {
    "happy-4": _happy,
    "bob-partition": _bob,
    "reject-divergence": _reject,
    "silent-1": _faulty("silent-1", "silent"),
    "equivocator-1": _faulty("equivocator-1", "equivocator"),
    "delayed-1": _faulty("delayed-1", "delayed:3"),
    "crash-1": _faulty("crash-1", "crash:1000000"),
    "sweep-base": _sweep_base,
}


def scenario_names() -> list[str]:
    return sorted(SCENARIOS)


def load_scenario(name_or_path: str) -> ScenarioConfig:
    """A canned scenario by name, else a key=value scenario file."""
    if name_or_path in SCENARIOS:
        return SCENARIOS[name_or_path]()
    path = Path(name_or_path)
    if path.is_file():
        return load_scenario_file(path)
    raise ConfigError(f"unknown scenario {name_or_path!r}; available: {', '.join(scenario_names())}")


def lower_median(values: Sequence[float]) -> float:
    """Middle value; for an even count the lower of the two middle values."""
    if not values:
        raise ValueError("median of no values")
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def report(result: SimResult) -> str:
    cfg = result.config
    out = [
        f"scenario {cfg.name}: {cfg.n_peers} peers, seed {cfg.seed}, "
        f"vote step {cfg.vote_step_delay / 1000:g} ms, {cfg.duration_s:g} s simulated",
        f"ended at t={result.end_time} us ({'time limit' if result.timed_out else 'quiescent'})",
    ]
    out.extend(p.line() for p in result.peers)
    c = result.counters
    out.append(
        f"proposals={c['proposals']} commits={c['commits']} forwards={c['forwards']} "
        f"dropped={c['dropped']} partitioned={c['partitioned']} equivocations={c['equivocations']}"
    )
    out.append(f"throughput={result.throughput():.3f} proposals/s stalled_peers={result.stalled_peers()}")
    if result.violations:
        out.append(f"INVARIANT VIOLATIONS ({len(result.violations)}):")
        out.extend(f"  {v}" for v in result.violations)
    else:
        out.append("invariants: ok")
    return "\n".join(out) + "\n"


def run_scenario(cfg: ScenarioConfig, trace_path: Optional[Path] = None) -> SimResult:
    result = run(cfg, record_trace=True)
    if trace_path is not None:
        Path(trace_path).write_text(result.trace_text())
    return result


@dataclass(frozen=True)
class TrialOutcome:
    throughput: float
    stalled: int
    violations: int


@dataclass(frozen=True)
class SweepCell:
    n_peers: int
    vote_step_delay_ms: float
    seed_base: int
    trials: tuple[TrialOutcome, ...]

    @property
    def median_throughput(self) -> float:
        return lower_median([t.throughput for t in self.trials])

    @property
    def stalled_peers_total(self) -> int:
        return sum(t.stalled for t in self.trials)

    @property
    def violations(self) -> int:
        return sum(t.violations for t in self.trials)


def _trial(cfg: ScenarioConfig) -> TrialOutcome:
    result = run(cfg, record_trace=False)
    return TrialOutcome(result.throughput(), result.stalled_peers(), len(result.violations))


def sweep_grid(base: ScenarioConfig, peers: Sequence[int], delays_ms: Sequence[float]) -> list[ScenarioConfig]:
    grid = []
    for n in peers:
        for d in delays_ms:
            cfg = replace(base, n_peers=n, vote_step_delay=int(round(d * 1000)))
            grid.append(cfg.validate())
    return grid


def run_sweep(grid: Sequence[ScenarioConfig], jobs: int = 1) -> list[SweepCell]:
    """Run ``trials`` seeds (seed, seed+1, ...) of every config.

    Trials may run in worker processes; results are reassembled in
    (config, trial) order so the output does not depend on ``jobs``.
    """
    if not grid:
        raise ConfigError("empty sweep grid")
    for cfg in grid:
        cfg.validate()
    tasks = [cfg.with_seed(cfg.seed + t) for cfg in grid for t in range(cfg.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_trial, tasks, chunksize=1))
    else:
        outcomes = [_trial(t) for t in tasks]
    cells, pos = [], 0
    for cfg in grid:
        trials = tuple(outcomes[pos:pos + cfg.trials])
        pos += cfg.trials
        cells.append(SweepCell(cfg.n_peers, cfg.vote_step_delay / 1000, cfg.seed, trials))
    return cells


def sweep_csv(cells: Sequence[SweepCell]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for cell in cells:
        writer.writerow([
            cell.n_peers, f"{cell.vote_step_delay_ms:g}", len(cell.trials),
            f"{cell.median_throughput:.4f}", cell.stalled_peers_total, cell.seed_base,
        ])
    return buf.getvalue()
