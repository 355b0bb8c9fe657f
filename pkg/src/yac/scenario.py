"""Experiment description shared by the simulator and the CLI.

Durations are integer microseconds unless a field name says otherwise.
Scenario files are flat ``key = value`` text mirroring the CLI flags; keys
that may appear more than once (``behavior``, ``partition``) accumulate.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

BEHAVIOR_KINDS = ("honest", "silent", "equivocator", "delayed", "crash", "divergent")
# Divergent peers follow the protocol but validate differently (fault injection
# on local state); they are not counted against the Byzantine budget.
NON_BYZANTINE = ("honest", "divergent")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Behavior:
    kind: str = "honest"
    param: int = 0

    @classmethod
    def parse(cls, text: str) -> "Behavior":
        kind, _, param = text.strip().partition(":")
        kind = kind.strip().lower()
        if kind not in BEHAVIOR_KINDS:
            raise ConfigError(f"unknown behavior {kind!r}; expected one of {', '.join(BEHAVIOR_KINDS)}")
        if kind == "delayed" and not param:
            param = "1"
        if kind == "crash" and not param:
            raise ConfigError("crash needs a time, e.g. crash:500000")
        try:
            value = int(param) if param else 0
        except ValueError:
            raise ConfigError(f"bad behavior parameter {param!r}") from None
        if value < 0:
            raise ConfigError("behavior parameter must be non-negative")
        return cls(kind, value)

    @property
    def byzantine(self) -> bool:
        return self.kind not in NON_BYZANTINE

    def __str__(self) -> str:
        return f"{self.kind}:{self.param}" if self.kind in ("delayed", "crash") else self.kind


@dataclass(frozen=True)
class Partition:
    """Messages between ``side_a`` and ``side_b`` are lost during ``[start, end)``."""

    side_a: frozenset
    side_b: frozenset
    start: int
    end: int

    @classmethod
    def parse(cls, text: str) -> "Partition":
        # "1|0,2,3@100000-900000"
        try:
            sides, _, window = text.strip().partition("@")
            a, b = sides.split("|")
            start, end = (int(x) for x in window.split("-"))
            side_a = frozenset(int(x) for x in a.split(",") if x.strip())
            side_b = frozenset(int(x) for x in b.split(",") if x.strip())
        except ValueError:
            raise ConfigError(f"bad partition {text!r}; expected A|B@START-END, e.g. 1|0,2,3@0-500000") from None
        if end < start or start < 0:
            raise ConfigError(f"partition window must satisfy 0 <= start <= end: {text!r}")
        return cls(side_a, side_b, start, end)

    def separates(self, a: int, b: int, now: int) -> bool:
        if not (self.start <= now < self.end):
            return False
        return (a in self.side_a and b in self.side_b) or (a in self.side_b and b in self.side_a)

    def __str__(self) -> str:
        a = ",".join(map(str, sorted(self.side_a)))
        b = ",".join(map(str, sorted(self.side_b)))
        return f"{a}|{b}@{self.start}-{self.end}"


@dataclass(frozen=True)
class NetworkModel:
    base_latency: int = 1_000
    # When set, each link gets a fixed base latency drawn uniformly from
    # [base_latency, latency_max] at setup.
    latency_max: Optional[int] = None
    jitter: int = 0
    drop_rate: float = 0.0
    partitions: tuple[Partition, ...] = ()
    # Receive-side processing: every message costs proc_base plus proc_per_sig
    # for each signature it carries; a peer processes one message at a time
    # and its timers only fire once the backlog ahead of them is done.
    proc_base: int = 0
    proc_per_sig: int = 0
    # A seeded subset of round(slow_fraction * n) peers runs on slower
    # hardware: their processing costs are multiplied by slow_factor.
    slow_fraction: float = 0.0
    slow_factor: float = 1.0


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    n_peers: int = 4
    behaviors: tuple[tuple[int, Behavior], ...] = ()
    vote_step_delay: int = 100_000
    batch_limit: int = 10
    batch_timeout: int = 100_000
    tx_rate: float = 100.0
    tx_count: Optional[int] = None
    malformed_rate: float = 0.0
    duration_s: float = 10.0
    network: NetworkModel = field(default_factory=NetworkModel)
    seed: int = 1
    trials: int = 1
    n_accounts: int = 8
    initial_balance: int = 1_000_000
    peer_names: tuple[str, ...] = ()

    @property
    def behavior_map(self) -> dict[int, Behavior]:
        return dict(self.behaviors)

    def behavior_of(self, index: int) -> Behavior:
        return self.behavior_map.get(index, Behavior())

    @property
    def n_byzantine(self) -> int:
        return sum(1 for _, b in self.behaviors if b.byzantine)

    @property
    def duration_us(self) -> int:
        return int(round(self.duration_s * 1_000_000))

    def validate(self) -> "ScenarioConfig":
        if self.n_peers < 1:
            raise ConfigError("n_peers must be at least 1")
        if self.vote_step_delay < 0 or self.batch_timeout < 0:
            raise ConfigError("delays must be non-negative")
        if self.vote_step_delay == 0:
            raise ConfigError("vote_step_delay must be positive")
        if self.batch_limit < 1:
            raise ConfigError("batch_limit must be positive")
        if self.tx_rate <= 0:
            raise ConfigError("tx_rate must be positive")
        if self.tx_count is not None and self.tx_count < 0:
            raise ConfigError("tx_count must be non-negative")
        if self.duration_s <= 0:
            raise ConfigError("duration must be positive")
        if self.trials < 1:
            raise ConfigError("trials must be positive")
        if not 0.0 <= self.malformed_rate <= 1.0:
            raise ConfigError("malformed_rate must be within [0, 1]")
        if self.n_accounts < 2:
            raise ConfigError("need at least two accounts")
        net = self.network
        if net.base_latency < 0 or net.jitter < 0 or net.proc_base < 0 or net.proc_per_sig < 0:
            raise ConfigError("network durations must be non-negative")
        if net.latency_max is not None and net.latency_max < net.base_latency:
            raise ConfigError("latency range upper bound is below the lower bound")
        if not 0.0 <= net.drop_rate <= 1.0:
            raise ConfigError("drop_rate must be within [0, 1]")
        if not 0.0 <= net.slow_fraction <= 1.0:
            raise ConfigError("slow_fraction must be within [0, 1]")
        if net.slow_factor < 1.0:
            raise ConfigError("slow_factor must be at least 1")
        seen = set()
        for idx, _ in self.behaviors:
            if not 0 <= idx < self.n_peers:
                raise ConfigError(f"behavior assigned to peer {idx}, but there are {self.n_peers} peers")
            if idx in seen:
                raise ConfigError(f"peer {idx} has two behaviors")
            seen.add(idx)
        for part in net.partitions:
            for idx in part.side_a | part.side_b:
                if not 0 <= idx < self.n_peers:
                    raise ConfigError(f"partition mentions unknown peer {idx}")
        if self.peer_names and len(self.peer_names) != self.n_peers:
            raise ConfigError("peer_names must name every peer")
        return self

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)


def assign_behaviors(n_peers: int, n_byzantine: int, kinds: Iterable[str]) -> tuple[tuple[int, Behavior], ...]:
    """Give the last ``n_byzantine`` peers the listed behaviors, cycling through them."""
    kinds = [Behavior.parse(k) for k in kinds] or [Behavior("silent")]
    if n_byzantine > n_peers:
        raise ConfigError("more byzantine peers than peers")
    return tuple((n_peers - n_byzantine + i, kinds[i % len(kinds)]) for i in range(n_byzantine))


def _parse_latency(text: str) -> tuple[int, Optional[int]]:
    lo, _, hi = text.partition(":")
    try:
        return int(lo), (int(hi) if hi else None)
    except ValueError:
        raise ConfigError(f"bad latency {text!r}; expected LO or LO:HI in microseconds") from None


def _ms(text: str) -> int:
    return int(round(float(text) * 1000))


def parse_kv(text: str, base: Optional[ScenarioConfig] = None) -> ScenarioConfig:
    """Parse a scenario file; unknown keys are an error."""
    cfg = base or ScenarioConfig()
    net = cfg.network
    values: dict = {}
    behaviors: list[str] = []
    partitions: list[Partition] = []
    n_byz: Optional[int] = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        key = key.strip().replace("-", "_")
        value = value.strip()
        try:
            if key == "behavior":
                behaviors.extend(v for v in value.split(";") if v.strip())
            elif key == "partition":
                partitions.append(Partition.parse(value))
            elif key == "byzantine":
                n_byz = int(value)
            elif key == "name":
                values["name"] = value
            elif key == "peers":
                values["n_peers"] = int(value)
            elif key == "vote_delay_ms":
                values["vote_step_delay"] = _ms(value)
            elif key == "batch_limit":
                values["batch_limit"] = int(value)
            elif key == "batch_timeout_ms":
                values["batch_timeout"] = _ms(value)
            elif key == "tx_rate":
                values["tx_rate"] = float(value)
            elif key == "tx_count":
                values["tx_count"] = int(value)
            elif key == "malformed_rate":
                values["malformed_rate"] = float(value)
            elif key == "duration_s":
                values["duration_s"] = float(value)
            elif key == "seed":
                values["seed"] = int(value)
            elif key == "trials":
                values["trials"] = int(value)
            elif key == "accounts":
                values["n_accounts"] = int(value)
            elif key == "peer_names":
                values["peer_names"] = tuple(v.strip() for v in value.split(","))
            elif key == "latency_us":
                lo, hi = _parse_latency(value)
                net = replace(net, base_latency=lo, latency_max=hi)
            elif key == "jitter_us":
                net = replace(net, jitter=int(value))
            elif key == "drop_rate":
                net = replace(net, drop_rate=float(value))
            elif key == "proc_base_us":
                net = replace(net, proc_base=int(value))
            elif key == "proc_sig_us":
                net = replace(net, proc_per_sig=int(value))
            elif key == "slow_fraction":
                net = replace(net, slow_fraction=float(value))
            elif key == "slow_factor":
                net = replace(net, slow_factor=float(value))
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    if partitions:
        net = replace(net, partitions=tuple(partitions))
    cfg = replace(cfg, network=net, **values)
    cfg = apply_behaviors(cfg, behaviors, n_byz)
    return cfg.validate()


def apply_behaviors(cfg: ScenarioConfig, specs: list[str], n_byzantine: Optional[int]) -> ScenarioConfig:
    """``IDX=KIND[:PARAM]`` entries pin a peer; bare kinds are spread over the byzantine count."""
    pinned, bare = [], []
    for spec in specs:
        idx, sep, kind = spec.partition("=")
        if sep:
            try:
                pinned.append((int(idx), Behavior.parse(kind)))
            except ValueError as exc:
                raise ConfigError(f"bad behavior {spec!r}: {exc}") from None
        else:
            bare.append(spec)
    if not pinned and not bare and n_byzantine is None:
        return cfg
    assigned = list(pinned) if (pinned or bare) else list(cfg.behaviors)
    if n_byzantine is not None or bare:
        count = n_byzantine if n_byzantine is not None else len(bare)
        taken = {i for i, _ in assigned}
        free = [i for i in range(cfg.n_peers - 1, -1, -1) if i not in taken]
        kinds = [Behavior.parse(k) for k in bare] or [Behavior("silent")]
        if count > len(free):
            raise ConfigError("more byzantine peers than peers")
        for k, idx in enumerate(sorted(free[:count])):
            assigned.append((idx, kinds[k % len(kinds)]))
    return replace(cfg, behaviors=tuple(sorted(assigned)))


def load_scenario_file(path: Path | str, base: Optional[ScenarioConfig] = None) -> ScenarioConfig:
    return parse_kv(Path(path).read_text(), base)


def dump_kv(cfg: ScenarioConfig) -> str:
    """Render a config in the scenario file format (round-trips through :func:`parse_kv`)."""
    net = cfg.network
    lines = [
        f"name = {cfg.name}",
        f"peers = {cfg.n_peers}",
        f"vote_delay_ms = {cfg.vote_step_delay / 1000:g}",
        f"batch_limit = {cfg.batch_limit}",
        f"batch_timeout_ms = {cfg.batch_timeout / 1000:g}",
        f"tx_rate = {cfg.tx_rate:g}",
        f"duration_s = {cfg.duration_s:g}",
        f"seed = {cfg.seed}",
        f"trials = {cfg.trials}",
        f"accounts = {cfg.n_accounts}",
        f"malformed_rate = {cfg.malformed_rate:g}",
        "latency_us = " + (f"{net.base_latency}:{net.latency_max}" if net.latency_max is not None
                           else f"{net.base_latency}"),
        f"jitter_us = {net.jitter}",
        f"drop_rate = {net.drop_rate:g}",
        f"proc_base_us = {net.proc_base}",
        f"proc_sig_us = {net.proc_per_sig}",
        f"slow_fraction = {net.slow_fraction:g}",
        f"slow_factor = {net.slow_factor:g}",
    ]
    if cfg.tx_count is not None:
        lines.append(f"tx_count = {cfg.tx_count}")
    if cfg.peer_names:
        lines.append("peer_names = " + ",".join(cfg.peer_names))
    for idx, beh in cfg.behaviors:
        lines.append(f"behavior = {idx}={beh}")
    for part in net.partitions:
        lines.append(f"partition = {part}")
    return "\n".join(lines) + "\n"

