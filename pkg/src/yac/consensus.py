"""YAC consensus state machine for a single peer.

Every handler consumes one input and returns the list of actions the host
must carry out; the machine itself does no I/O and never reads a clock.
Committed blocks go straight into the peer's :class:`~yac.ledger.Ledger`
because a buffered proposal for the next round has to be validated against
the post-commit state within the same step.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from .crypto import Hash, KeyPair, PeerId, SignatureScheme
from .errors import Fault
from .ledger import Ledger, TxFilter, apply_proposal, build_block
from .model import (
    Block,
    CatchUp,
    CommitMessage,
    Message,
    Proposal,
    RejectMessage,
    Vote,
    make_vote,
)
from .order import peer_order
from .quorum import detect_reject, supermajority_threshold, verify_commit, verify_reject

# Re-exported so callers can treat this module as the protocol surface.
__all__ = [
    "Action", "Alarm", "ArmTimer", "Broadcast", "Commit", "Phase", "RoundVotes", "Send",
    "YacPeer", "detect_reject", "peer_order", "supermajority_threshold", "verify_commit",
]


@dataclass(frozen=True)
class Send:
    to: PeerId
    message: Message


@dataclass(frozen=True)
class Broadcast:
    message: Message


@dataclass(frozen=True)
class ArmTimer:
    delay: int
    token: int


@dataclass(frozen=True)
class Commit:
    block: Block
    commit: CommitMessage
    # True when the block body came from someone else's commit message.
    adopted: bool = False


@dataclass(frozen=True)
class Alarm:
    reason: str
    round: int


Action = Union[Send, Broadcast, ArmTimer, Commit, Alarm]


class Phase(enum.Enum):
    IDLE = "idle"
    VOTING = "voting"
    HALTED = "halted"


@dataclass
class RoundVotes:
    """Votes collected for one round, bucketed by block hash."""

    buckets: dict[Hash, dict[PeerId, Vote]] = field(default_factory=dict)
    voters: set[PeerId] = field(default_factory=set)
    equivocators: set[PeerId] = field(default_factory=set)

    def add(self, vote: Vote) -> bool:
        bucket = self.buckets.setdefault(vote.block_hash, {})
        if vote.signer in bucket:
            return False
        if vote.signer in self.voters:
            self.equivocators.add(vote.signer)
        bucket[vote.signer] = vote
        self.voters.add(vote.signer)
        return True

    def signer_view(self) -> dict[Hash, set[PeerId]]:
        return {h: set(b) for h, b in self.buckets.items()}

    def one_vote_per_signer(self) -> list[Vote]:
        picked: dict[PeerId, Vote] = {}
        for h in sorted(self.buckets):
            for signer, vote in self.buckets[h].items():
                picked.setdefault(signer, vote)
        return list(picked.values())


class YacPeer:
    def __init__(
        self,
        key: KeyPair,
        peers: Sequence[PeerId],
        ledger: Ledger,
        scheme: SignatureScheme,
        vote_step_delay: int,
        tx_filter: Optional[TxFilter] = None,
    ):
        if not peers:
            raise Fault("empty-network", "peer list is empty")
        self.key = key
        self.me = key.peer
        self.peers = tuple(sorted(peers))
        self.known = frozenset(self.peers)
        if self.me not in self.known:
            raise ValueError(f"{self.me!r} is not in the peer list")
        self.n = len(self.peers)
        self.threshold = supermajority_threshold(self.n)
        self.ledger = ledger
        self.scheme = scheme
        self.vote_step_delay = vote_step_delay
        self.tx_filter = tx_filter

        self.round = ledger.height
        self.phase = Phase.IDLE
        self.my_block: Optional[Block] = None
        self.my_vote: Optional[Vote] = None
        self.last_vote: Optional[Vote] = None
        self.probed: set[PeerId] = set()
        self.ahead = -1  # highest round we dropped a message for as too far ahead
        self.sync_round = -1
        self.sync_index = 0
        self.order: Optional[tuple[PeerId, ...]] = None
        self.next_target_index = 0
        self.votes = RoundVotes()
        self.pending_proof: Optional[CommitMessage] = None
        self.commit_sent = False
        self.buffered: list[Message] = []
        self.equivocators: set[PeerId] = set()
        self.metrics: Counter = Counter()

    # -- helpers ---------------------------------------------------------

    @property
    def last_commit(self) -> Optional[CommitMessage]:
        return self.ledger.store.blocks[-1][1] if self.ledger.store.blocks else None

    def _reset_round(self):
        self.phase = Phase.IDLE
        self.my_block = None
        self.my_vote = None
        self.order = None
        self.next_target_index = 0
        self.equivocators |= self.votes.equivocators
        self.votes = RoundVotes()
        self.pending_proof = None
        self.commit_sent = False
        self.probed = set()

    def _buffer(self, msg: Message):
        self.buffered.append(msg)
        self.metrics["buffered"] += 1

    def handle(self, msg: Message) -> list[Action]:
        if isinstance(msg, Vote):
            return self.on_vote(msg)
        if isinstance(msg, CommitMessage):
            return self.on_commit(msg)
        if isinstance(msg, Proposal):
            return self.on_proposal(msg)
        if isinstance(msg, RejectMessage):
            return self.on_reject(msg)
        if isinstance(msg, CatchUp):
            return self.on_catch_up(msg)
        raise TypeError(f"unexpected message {type(msg).__name__}")

    # -- proposal --------------------------------------------------------

    def on_proposal(self, proposal: Proposal) -> list[Action]:
        if self.phase is Phase.HALTED:
            return []
        if proposal.round == self.round + 1:
            self._buffer(proposal)
            return []
        if proposal.round != self.round:
            self.metrics["stale-proposal" if proposal.round < self.round else "future-proposal"] += 1
            self.ahead = max(self.ahead, proposal.round)
            return []
        if self.phase is not Phase.IDLE:
            self.metrics["duplicate-proposal"] += 1
            return []

        vp, _ = apply_proposal(self.ledger.state, proposal, self.scheme, self.tx_filter)
        block = build_block(vp, self.ledger.state)
        self.my_block = block
        self.my_vote = make_vote(self.scheme, self.key, self.round, proposal.hash, block.block_hash)
        self.last_vote = self.my_vote
        self.order = peer_order(block.block_hash, self.peers)
        self.phase = Phase.VOTING

        if self.pending_proof is not None and self.pending_proof.block_hash == block.block_hash:
            return self._apply_commit(self.pending_proof)

        r = self.round
        self.next_target_index = 1 % self.n
        actions = self._propagate(self.order[0])
        if self.phase is Phase.VOTING and self.round == r:
            actions.append(ArmTimer(self.vote_step_delay, r))
        return actions

    def _propagate(self, target: PeerId) -> list[Action]:
        if target == self.me:
            return self._record_vote(self.my_vote)
        return [Send(target, self.my_vote)]

    # -- vote step -------------------------------------------------------

    def on_timer(self, token: int) -> list[Action]:
        if token < 0:
            return self._sync_step(-token - 1)
        if self.phase is not Phase.VOTING or token != self.round:
            return []
        target = self.order[self.next_target_index]
        self.next_target_index = (self.next_target_index + 1) % self.n
        r = self.round
        actions = self._propagate(target)
        if self.phase is Phase.VOTING and self.round == r:
            actions.append(ArmTimer(self.vote_step_delay, r))
        return actions

    def on_vote(self, vote: Vote) -> list[Action]:
        if self.phase is Phase.HALTED:
            return []
        if vote.signer not in self.known:
            self.metrics["unknown-signer"] += 1
            return []
        if not self.scheme.verify(vote.signer, vote.payload, vote.signature):
            self.metrics["bad-vote"] += 1
            return []
        if vote.round < self.round:
            return self._forward(vote)
        if vote.round == self.round + 1:
            self._buffer(vote)
            return self._probe(vote.signer) if self.phase is Phase.IDLE else []
        if vote.round > self.round:
            self.metrics["future-vote"] += 1
            self.ahead = max(self.ahead, vote.round)
            return self._probe(vote.signer)
        return self._record_vote(vote)

    def _probe(self, target: PeerId) -> list[Action]:
        """We are behind ``target``: resend our latest vote so it forwards the commits we lack.

        Sent at most once per peer per round. It is what lets a peer that
        dropped a proposal two rounds ahead recover through commit forwarding.
        """
        vote = self.my_vote or self.last_vote
        if vote is None or target == self.me or target in self.probed:
            return []
        self.probed.add(target)
        self.metrics["probe"] += 1
        return [Send(target, vote)]

    def _probe_commit(self, commit: CommitMessage) -> list[Action]:
        for v in commit.votes:
            if v.signer != self.me and v.signer not in self.probed and v.signer in self.known:
                return self._probe(v.signer)
        return []

    def _forward(self, vote: Vote) -> list[Action]:
        """Send the commit(s) for an already-decided round back to the voter."""
        first = vote.round
        if first < self.ledger.genesis.height:
            return []
        commits = []
        for height in range(first, self.ledger.height):
            block, proof = self.ledger.entry(height)
            commits.append(proof.with_body(block))
        self.metrics["forwarded"] += 1
        if len(commits) == 1:
            return [Send(vote.signer, commits[0])]
        return [Send(vote.signer, CatchUp(tuple(commits)))]

    def _record_vote(self, vote: Vote) -> list[Action]:
        if not self.votes.add(vote):
            return []
        bucket = self.votes.buckets[vote.block_hash]
        if len(bucket) >= self.threshold:
            if self.commit_sent:
                return []
            self.commit_sent = True
            body = self.my_block if self.my_block and self.my_block.block_hash == vote.block_hash else None
            commit = CommitMessage(self.round, vote.block_hash, tuple(bucket.values()), body)
            return [Broadcast(commit)] + self._apply_commit(commit)
        if detect_reject(self.votes.signer_view(), self.n):
            reject = RejectMessage(self.round, tuple(self.votes.one_vote_per_signer()))
            return [Broadcast(reject)] + self._halt()
        return []

    # -- commit / reject -------------------------------------------------

    def on_commit(self, commit: CommitMessage) -> list[Action]:
        if self.phase is Phase.HALTED:
            return []
        if commit.round < self.round:
            self.metrics["stale-commit"] += 1
            return []
        if commit.round == self.round + 1:
            self._buffer(commit)
            return self._probe_commit(commit) if self.phase is Phase.IDLE else []
        if commit.round > self.round:
            self.metrics["future-commit"] += 1
            self.ahead = max(self.ahead, commit.round)
            return self._probe_commit(commit)
        if not verify_commit(commit, self.known, self.scheme):
            self.metrics["bad-commit"] += 1
            return []
        return self._apply_commit(commit)

    def _apply_commit(self, commit: CommitMessage) -> list[Action]:
        """Commit a verified proof for the current round, if a matching block body is at hand."""
        block = None
        if self.my_block is not None and self.my_block.block_hash == commit.block_hash:
            block = self.my_block
        elif commit.body is not None and self._body_fits(commit.body, commit.block_hash):
            block = commit.body
        if block is None:
            # Proof without a usable body: keep voting, a forwarded commit will carry it.
            if self.pending_proof is None:
                self.pending_proof = commit.without_body()
                self.metrics["missing-body"] += 1
            return []
        self.ledger.commit(block, commit)
        actions: list[Action] = [Commit(block, commit.without_body(), adopted=block is not self.my_block)]
        self.round += 1
        self._reset_round()
        pending, self.buffered = self.buffered, []
        for msg in pending:
            actions.extend(self.handle(msg))
        actions.extend(self._maybe_sync())
        return actions

    def _maybe_sync(self) -> list[Action]:
        """Start asking peers for commits if we skipped traffic for this round.

        A peer that dropped this round's proposal as too far ahead cannot vote
        in it, and if the rest of the network has gone quiet nobody will ever
        send it the commit. Probe one peer per vote step until the round moves.
        """
        if self.phase is not Phase.IDLE or self.round > self.ahead or self.sync_round == self.round:
            return []
        self.sync_round = self.round
        self.sync_index = self.peers.index(self.me)
        return self._sync_step(self.round)

    def _sync_step(self, round: int) -> list[Action]:
        if self.phase is not Phase.IDLE or round != self.round:
            return []
        self.sync_index = (self.sync_index + 1) % self.n
        target = self.peers[self.sync_index]
        if target == self.me:
            self.sync_index = (self.sync_index + 1) % self.n
            target = self.peers[self.sync_index]
        self.probed.discard(target)
        actions = self._probe(target)
        actions.append(ArmTimer(self.vote_step_delay, -round - 1))
        return actions

    def _body_fits(self, body: Block, block_hash: Hash) -> bool:
        return (
            body.block_hash == block_hash
            and body.height == self.ledger.height
            and body.prev_block_hash == self.ledger.top_block_hash
            and body.expected_hash() == block_hash
        )

    def on_catch_up(self, msg: CatchUp) -> list[Action]:
        actions: list[Action] = []
        for commit in msg.commits:
            actions.extend(self.on_commit(commit))
        return actions

    def on_reject(self, reject: RejectMessage) -> list[Action]:
        if self.phase is Phase.HALTED:
            return []
        if reject.round == self.round + 1:
            self._buffer(reject)
            return []
        if reject.round != self.round:
            self.metrics["stale-reject"] += 1
            return []
        if not verify_reject(reject, self.known, self.scheme):
            self.metrics["bad-reject"] += 1
            return []
        return self._halt()

    def _halt(self) -> list[Action]:
        self.phase = Phase.HALTED
        self.buffered = []
        return [Alarm("bft-violation", self.round)]
