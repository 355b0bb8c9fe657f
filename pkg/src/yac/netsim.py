"""Deterministic discrete-event network simulator.

Hosts the ordering service, the client workload and one :class:`YacPeer` per
node. Virtual time is integer microseconds. Every random draw comes from a
stream derived from the scenario seed, and simultaneous events are ordered
by insertion sequence, so a (scenario, seed) pair fixes the whole run.
"""
from __future__ import annotations

import hashlib
import heapq
import random
import struct
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Optional

from .consensus import Alarm, ArmTimer, Broadcast, Commit, Phase, Send, YacPeer
from .crypto import SIM_SCHEME, Hash, KeyPair, PeerId, Signature, SignatureScheme, hash_bytes
from .errors import Fault
from .ledger import Ledger, WorldState
from .model import (
    CatchUp,
    CommitMessage,
    Proposal,
    RejectMessage,
    Transaction,
    Transfer,
    Vote,
    make_transaction,
    make_vote,
    render,
)
from .ordering import OrderingState
from .scenario import Behavior, ScenarioConfig

# event kinds
_MSG, _DONE, _TIMER, _SUBMIT, _OS_WAKE, _NOTICE = range(6)


def substream(seed: int, label: str) -> random.Random:
    digest = hashlib.blake2b(f"{seed}:{label}".encode(), digest_size=8).digest()
    return random.Random(int.from_bytes(digest, "little"))


class _Meter:
    """Wraps a signature scheme and counts verifications, to charge processing time."""

    def __init__(self, scheme: SignatureScheme):
        self.scheme = scheme
        self.verifications = 0

    def keypair(self, seed: bytes, display_name: str = "") -> KeyPair:
        return self.scheme.keypair(seed, display_name)

    def sign(self, key: KeyPair, payload: bytes) -> Signature:
        return self.scheme.sign(key, payload)

    def verify(self, peer: PeerId, payload: bytes, sig: Signature) -> bool:
        self.verifications += 1
        return self.scheme.verify(peer, payload, sig)


@dataclass
class PeerSummary:
    index: int
    name: str
    behavior: str
    height: int
    round: int
    top_block_hash: Hash
    phase: str
    alarms: list[str]
    equivocators: list[str]
    metrics: dict

    def line(self) -> str:
        alarms = ",".join(self.alarms) or "-"
        return (f"{self.name:>8} {self.behavior:<12} height={self.height} round={self.round} "
                f"top={self.top_block_hash.short()} phase={self.phase} alarms={alarms}")


@dataclass
class SimResult:
    config: ScenarioConfig
    trace: Optional[list[str]]
    peers: list[PeerSummary]
    counters: Counter
    violations: list[str]
    timed_out: bool
    end_time: int
    ledgers: list[Ledger] = field(repr=False, default_factory=list)
    ordering: Optional[OrderingState] = field(repr=False, default=None)
    commits: dict = field(repr=False, default_factory=dict)

    def trace_text(self) -> str:
        return "".join(line + "\n" for line in self.trace or ())

    @property
    def honest(self) -> list[PeerSummary]:
        return [p for p in self.peers if not Behavior.parse(p.behavior).byzantine]

    @property
    def max_height(self) -> int:
        return max((p.height for p in self.honest), default=0)

    def stalled_peers(self) -> int:
        top = max(p.height for p in self.peers)
        return sum(1 for p in self.peers if p.height < top - 1)

    def throughput(self) -> float:
        return self.max_height / self.config.duration_s

    def alarms(self) -> list[tuple[str, str]]:
        return [(p.name, a) for p in self.peers for a in p.alarms]


class Simulation:
    """One run of a scenario. Call :meth:`run` once."""

    def __init__(self, cfg: ScenarioConfig, scheme: SignatureScheme = SIM_SCHEME,
                 record_trace: bool = True, check_lag: bool = False):
        cfg.validate()
        self.cfg = cfg
        self.scheme = scheme
        self.n = cfg.n_peers
        self.os_node = self.n
        self.net = cfg.network
        self.check_lag = check_lag
        self.trace: Optional[list[str]] = [] if record_trace else None

        self.rng_net = substream(cfg.seed, "net")
        self.rng_tx = substream(cfg.seed, "tx")
        rng_link = substream(cfg.seed, "links")

        names = cfg.peer_names or tuple(f"p{i}" for i in range(self.n))
        self.names = list(names) + ["os"]
        self.keys: list[KeyPair] = [
            scheme.keypair(f"yac-peer:{cfg.seed}:{i}".encode(), names[i]) for i in range(self.n)
        ]
        self.index_of: dict[PeerId, int] = {k.peer: i for i, k in enumerate(self.keys)}
        peer_ids = [k.peer for k in self.keys]
        self.behaviors: list[Behavior] = [cfg.behavior_of(i) for i in range(self.n)]

        # fixed per-link base latency, symmetric, node n is the ordering service
        size = self.n + 1
        self.latency = [[0] * size for _ in range(size)]
        for i in range(size):
            for j in range(i + 1, size):
                if self.net.latency_max is not None:
                    lat = rng_link.randint(self.net.base_latency, self.net.latency_max)
                else:
                    lat = self.net.base_latency
                self.latency[i][j] = self.latency[j][i] = lat

        self.accounts = [f"acct{i}" for i in range(cfg.n_accounts)]
        self.client_keys = [
            scheme.keypair(f"yac-client:{cfg.seed}:{a}".encode(), a) for a in self.accounts
        ]
        genesis = WorldState({a: cfg.initial_balance for a in self.accounts})

        self.meter = _Meter(scheme)
        self.peers: list[YacPeer] = []
        for i in range(self.n):
            beh = self.behaviors[i]
            tx_filter = None
            if beh.kind == "divergent":
                tx_filter = (lambda idx, _tx, me=i, n=self.n: idx % n == me)
            ledger = Ledger(genesis, peer_ids, self.meter)
            self.peers.append(YacPeer(self.keys[i], peer_ids, ledger, self.meter,
                                      cfg.vote_step_delay, tx_filter))

        self.os = OrderingState(cfg.batch_limit, cfg.batch_timeout, scheme)
        self.os_wake_at: Optional[int] = None

        self.queue: list = []
        self.seq = 0
        self.now = 0
        self.in_flight = 0
        self.busy = [False] * self.n
        self.inbox: list[deque] = [deque() for _ in range(self.n)]
        slow = substream(cfg.seed, "cpu").sample(range(self.n), round(self.net.slow_fraction * self.n))
        self.cpu_factor = [self.net.slow_factor if i in slow else 1.0 for i in range(self.n)]
        self.proc_model = bool(self.net.proc_base or self.net.proc_per_sig)
        self.counters: Counter = Counter()
        self.violations: list[str] = []
        self.alarms: list[list[str]] = [[] for _ in range(self.n)]
        self.committed: dict[int, tuple[Hash, int]] = {}
        self.tx_submitted = 0
        self._lag_reported = False

    # -- plumbing --------------------------------------------------------

    def _push(self, at: int, kind: int, a=None, b=None):
        self.seq += 1
        heapq.heappush(self.queue, (at, self.seq, kind, a, b))

    def _log(self, node: int, kind: str, detail: str):
        self.trace.append(f"{self.now}\t{self.names[node]}\t{kind}\t{detail}")

    def _crashed(self, node: int) -> bool:
        beh = self.behaviors[node] if node < self.n else None
        return beh is not None and beh.kind == "crash" and self.now >= beh.param

    def _honest(self, node: int) -> bool:
        return not self.behaviors[node].byzantine

    # -- workload --------------------------------------------------------

    def _tx_time(self, k: int) -> int:
        return int(k * 1_000_000 / self.cfg.tx_rate)

    def _schedule_next_submit(self):
        k = self.tx_submitted
        if self.cfg.tx_count is not None and k >= self.cfg.tx_count:
            return
        at = self._tx_time(k)
        if at >= self.cfg.duration_us:
            return
        self._push(at, _SUBMIT, k)

    def _make_tx(self, k: int) -> Transaction:
        rng = self.rng_tx
        src = rng.randrange(len(self.accounts))
        dst = rng.randrange(len(self.accounts) - 1)
        if dst >= src:
            dst += 1
        amount = rng.randint(1, 10)
        malformed = self.cfg.malformed_rate > 0 and rng.random() < self.cfg.malformed_rate
        key = self.client_keys[src]
        tx = make_transaction(self.scheme, key, self.accounts[src],
                              Transfer(self.accounts[src], self.accounts[dst], amount), k)
        if malformed:
            sig = tx.client_signature
            bad = Signature(bytes([sig.data[0] ^ 0xFF]) + sig.data[1:], sig.signer)
            tx = Transaction(tx.id, tx.creator, tx.command, tx.nonce, bad)
        return tx

    # -- ordering service ------------------------------------------------

    def _os_try(self):
        proposal = self.os.maybe_emit_proposal(self.now)
        if proposal is not None:
            self.counters["proposals"] += 1
            if self.trace is not None:
                self._log(self.os_node, "propose", render(proposal))
            for i in range(self.n):
                # Ordering-service delivery is reliable: no drops, no partitions.
                delay = self.latency[self.os_node][i] + self._jitter()
                self._schedule_message(self.os_node, i, proposal, delay)
        deadline = self.os.next_deadline()
        if deadline is not None and deadline > self.now and self.os_wake_at != deadline:
            self.os_wake_at = deadline
            self._push(deadline, _OS_WAKE)

    # -- message transport -----------------------------------------------

    def _jitter(self) -> int:
        return self.rng_net.randint(0, self.net.jitter) if self.net.jitter else 0

    def _schedule_message(self, src: int, dst: int, msg, delay: int, forward: bool = False):
        self.in_flight += 1
        self._push(self.now + delay, _MSG, dst, (src, msg, forward))

    def _outbound_extra(self, src: int) -> Optional[int]:
        """Extra delay imposed by the sender's behavior, or None if it sends nothing."""
        beh = self.behaviors[src]
        if beh.kind == "silent" or self._crashed(src):
            return None
        if beh.kind == "delayed":
            return beh.param * self.cfg.vote_step_delay
        return 0

    def _send(self, src: int, dst: int, msg, forward: bool = False):
        self.counters["sent"] += 1
        extra = self._outbound_extra(src)
        if extra is None:
            self.counters["suppressed"] += 1
            return
        if self.behaviors[src].kind == "equivocator" and isinstance(msg, Vote):
            msg = self._fabricate(src, dst, msg)
        if forward:
            self.counters["forwards"] += 1
            self.counters[f"forwards_to:{self.names[dst]}"] += 1
        if self.trace is not None:
            self._log(src, "forward" if forward else "send", f"{self.names[dst]} {render(msg)}")
        for part in self.net.partitions:
            if part.separates(src, dst, self.now):
                self.counters["partitioned"] += 1
                if self.trace is not None:
                    self._log(src, "partitioned", f"{self.names[dst]} {render(msg)}")
                return
        if self.net.drop_rate and self.rng_net.random() < self.net.drop_rate:
            self.counters["dropped"] += 1
            if self.trace is not None:
                self._log(src, "dropped", f"{self.names[dst]} {render(msg)}")
            return
        self._schedule_message(src, dst, msg, self.latency[src][dst] + self._jitter() + extra, forward)

    def _fabricate(self, src: int, dst: int, vote: Vote) -> Vote:
        seed = (b"equivocate" + self.keys[src].peer.public_key + self.keys[dst].peer.public_key
                + struct.pack("<Q", vote.round))
        fake = hash_bytes(seed)
        self.counters["equivocations"] += 1
        return make_vote(self.scheme, self.keys[src], vote.round, vote.proposal_hash, fake)

    def _notify_os(self, src: int, round: int):
        extra = self._outbound_extra(src)
        if extra is None:
            return
        self.in_flight += 1
        self._push(self.now + self.latency[src][self.os_node] + extra, _NOTICE, src, round)

    # -- peer execution --------------------------------------------------

    def _arrive(self, dst: int, src: int, msg, forward: bool = False):
        if self._crashed(dst):
            self.in_flight -= 1
            self.counters["lost-to-crash"] += 1
            return
        if not self.proc_model:
            self.in_flight -= 1
            self._interpret(dst, self._process(dst, src, msg), forward)
            return
        self.inbox[dst].append((src, msg, forward))
        if not self.busy[dst]:
            self._start_work(dst)

    def _fire_timer(self, node: int, token: int):
        if self._crashed(node):
            return
        if not self.proc_model:
            self._interpret(node, self.peers[node].on_timer(token))
            return
        # An expired timer queues behind whatever the peer is already working on.
        self.inbox[node].append((None, token, False))
        if not self.busy[node]:
            self._start_work(node)

    def _start_work(self, node: int):
        """Handle the next inbox item now; its output leaves once the work is paid for."""
        inbox = self.inbox[node]
        if self._crashed(node):
            lost = sum(1 for src, _, _ in inbox if src is not None)
            self.in_flight -= lost
            self.counters["lost-to-crash"] += lost
            inbox.clear()
            return
        src, item, forward = inbox.popleft()
        before = self.meter.verifications
        if src is None:
            actions = self.peers[node].on_timer(item)
        else:
            self.in_flight -= 1
            actions = self._process(node, src, item)
        verified = self.meter.verifications - before
        cost = self.net.proc_base + self.net.proc_per_sig * verified
        cost = max(1, round(cost * self.cpu_factor[node]))
        self.busy[node] = True
        self._push(self.now + cost, _DONE, node, (actions, forward))

    def _finish_work(self, node: int, actions, forward: bool):
        self.busy[node] = False
        if self._crashed(node):
            return
        self._interpret(node, actions, forward)
        if self.inbox[node] and not self.busy[node]:
            self._start_work(node)

    def _process(self, dst: int, src: int, msg) -> list:
        self.counters["delivered"] += 1
        if self.trace is not None:
            self._log(dst, "recv", f"{self.names[src]} {render(msg)}")
        try:
            return self.peers[dst].handle(msg)
        except Fault as exc:
            self._violation(f"fault at {self.names[dst]}: {exc}")
            return []

    def _interpret(self, node: int, actions, via_forward: bool = False):
        for act in actions:
            if isinstance(act, Send):
                dst = self.index_of.get(act.to)
                if dst is None:
                    if self.trace is not None:
                        self._log(node, "warn", f"send to unknown peer {act.to!r}")
                    self.counters["unknown-target"] += 1
                    continue
                forward = isinstance(act.message, (CommitMessage, CatchUp))
                self._send(node, dst, act.message, forward=forward)
            elif isinstance(act, Broadcast):
                for dst in range(self.n):
                    if dst != node:
                        self._send(node, dst, act.message)
            elif isinstance(act, ArmTimer):
                self._push(self.now + act.delay, _TIMER, node, act.token)
            elif isinstance(act, Commit):
                self._on_commit(node, act, via_forward)
            elif isinstance(act, Alarm):
                self.alarms[node].append(act.reason)
                self.counters["alarms"] += 1
                if self.trace is not None:
                    self._log(node, "alarm", f"{act.reason} r={act.round}")

    def _on_commit(self, node: int, act: Commit, via_forward: bool = False):
        block = act.block
        self.counters["commits"] += 1
        if self.trace is not None:
            how = (" via-forward" if via_forward else "") + (" adopted" if act.adopted else "")
            self._log(node, "commit", f"{render(block)}{how}")
        if self._honest(node):
            prior = self.committed.get(block.height)
            if prior is None:
                self.committed[block.height] = (block.block_hash, node)
            elif prior[0] != block.block_hash:
                self._violation(
                    f"agreement: {self.names[node]} committed {block.block_hash.short()} at height "
                    f"{block.height}, {self.names[prior[1]]} committed {prior[0].short()}")
        if any(v < 0 for v in self.peers[node].ledger.state.accounts.values()):
            self._violation(f"negative balance at {self.names[node]} height {block.height}")
        self._notify_os(node, block.height)

    def _violation(self, text: str):
        self.violations.append(f"t={self.now} {text}")
        if self.trace is not None:
            self.trace.append(f"{self.now}\t-\tviolation\t{text}")

    def _check_lag(self):
        rounds = [p.round for i, p in enumerate(self.peers)
                  if self._honest(i) and p.phase is not Phase.HALTED]
        if rounds and max(rounds) - min(rounds) > 1:
            self.counters["lag-violations"] += 1
            if not self._lag_reported:
                self._lag_reported = True
                self._violation(f"round lag: honest rounds span {min(rounds)}..{max(rounds)}")

    # -- main loop -------------------------------------------------------

    def run(self) -> SimResult:
        limit = self.cfg.duration_us
        self._schedule_next_submit()
        timed_out = False
        queue = self.queue
        while queue:
            at, _, kind, a, b = queue[0]
            if at > limit:
                timed_out = True
                break
            heapq.heappop(queue)
            self.now = at
            if kind == _MSG:
                self._arrive(a, *b)
            elif kind == _DONE:
                self._finish_work(a, *b)
            elif kind == _TIMER:
                self._fire_timer(a, b)
            elif kind == _SUBMIT:
                tx = self._make_tx(a)
                self.tx_submitted += 1
                accepted = self.os.submit_transaction(tx)
                if self.trace is not None:
                    self._log(self.os_node, "submit", f"{render(tx)} {'ok' if accepted else 'rejected'}")
                self._schedule_next_submit()
                self._os_try()
            elif kind == _OS_WAKE:
                self.os_wake_at = None
                self._os_try()
            elif kind == _NOTICE:
                self.in_flight -= 1
                self.os.on_committed(b)
                self._os_try()
            if self.check_lag and self.in_flight == 0:
                self._check_lag()
        return self._result(timed_out)

    def _result(self, timed_out: bool) -> SimResult:
        summaries = []
        for i, peer in enumerate(self.peers):
            summaries.append(PeerSummary(
                index=i,
                name=self.names[i],
                behavior=str(self.behaviors[i]),
                height=peer.ledger.height,
                round=peer.round,
                top_block_hash=peer.ledger.top_block_hash,
                phase=peer.phase.value,
                alarms=list(self.alarms[i]),
                equivocators=sorted(self.names[self.index_of[p]] for p in peer.equivocators | peer.votes.equivocators),
                metrics=dict(sorted(peer.metrics.items())),
            ))
        if self.trace is not None:
            status = "timeout" if timed_out else "quiescent"
            self.trace.append(f"{self.now}\t-\tend\t{status}")
            for s in summaries:
                self.trace.append(f"{self.now}\t{s.name}\tsummary\t{s.line().strip()}")
        return SimResult(
            config=self.cfg,
            trace=self.trace,
            peers=summaries,
            counters=self.counters,
            violations=self.violations,
            timed_out=timed_out,
            end_time=self.now,
            ledgers=[p.ledger for p in self.peers],
            ordering=self.os,
            commits=self.committed,
        )


def run(cfg: ScenarioConfig, record_trace: bool = True, check_lag: bool = False,
        scheme: SignatureScheme = SIM_SCHEME) -> SimResult:
    return Simulation(cfg, scheme, record_trace=record_trace, check_lag=check_lag).run()
