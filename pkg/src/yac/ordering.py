"""The ordering service: batches transactions into proposals.

Modeled as a single honest process. It emits a proposal once ``batch_limit``
transactions are queued, or once ``batch_timeout`` has passed since the last
emission with anything queued, and never runs more than one proposal ahead of
the first commit it hears about.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .crypto import Hash, SignatureScheme
from .ledger import stateless_validate
from .model import Proposal, Transaction


@dataclass
class OrderingState:
    batch_limit: int
    batch_timeout: int
    scheme: SignatureScheme
    queue: deque = field(default_factory=deque)
    next_round: int = 0
    last_emit_time: int = 0
    # Highest round that at least one peer reported committed, -1 for none.
    committed_round: int = -1
    seen: set = field(default_factory=set)
    accepted: list = field(default_factory=list)
    emitted: list = field(default_factory=list)
    dropped_invalid: int = 0
    dropped_duplicate: int = 0

    def __post_init__(self):
        if self.batch_limit < 1:
            raise ValueError("batch_limit must be positive")
        if self.batch_timeout < 0:
            raise ValueError("batch_timeout must be non-negative")

    def submit_transaction(self, tx: Transaction) -> bool:
        if tx.id in self.seen:
            self.dropped_duplicate += 1
            return False
        if not stateless_validate(tx, self.scheme):
            self.dropped_invalid += 1
            return False
        self.seen.add(tx.id)
        self.queue.append(tx)
        self.accepted.append(tx.id)
        return True

    @property
    def waiting_for_commit(self) -> bool:
        return self.next_round > self.committed_round + 1

    def on_committed(self, round: int):
        self.committed_round = max(self.committed_round, round)

    def due(self, now: int) -> bool:
        if not self.queue or self.waiting_for_commit:
            return False
        return len(self.queue) >= self.batch_limit or now - self.last_emit_time >= self.batch_timeout

    def next_deadline(self) -> Optional[int]:
        """Earliest time a timeout-triggered emission could happen, if one is pending."""
        if not self.queue or self.waiting_for_commit:
            return None
        return self.last_emit_time + self.batch_timeout

    def maybe_emit_proposal(self, now: int) -> Optional[Proposal]:
        if not self.due(now):
            return None
        take = min(self.batch_limit, len(self.queue))
        txs = tuple(self.queue.popleft() for _ in range(take))
        proposal = Proposal(self.next_round, txs, now)
        self.next_round += 1
        self.last_emit_time = now
        self.emitted.append(proposal)
        return proposal

    def emitted_tx_ids(self) -> list[Hash]:
        return [tx.id for p in self.emitted for tx in p.transactions]
