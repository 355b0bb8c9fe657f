"""Vote counting: supermajority threshold, commit proofs and the reject condition."""
from __future__ import annotations

from typing import Collection, Hashable, Mapping

from .crypto import PeerId, SignatureScheme
from .errors import Fault
from .model import CommitMessage, RejectMessage, Vote


def supermajority_threshold(n: int) -> int:
    """Smallest vote count strictly greater than two thirds of ``n`` peers."""
    if n <= 0:
        raise Fault("empty-network", f"n={n}")
    return 2 * n // 3 + 1


def _known(peers: Collection[PeerId]) -> Collection[PeerId]:
    return peers if isinstance(peers, (set, frozenset)) else frozenset(peers)


def verify_commit(commit: CommitMessage, peers: Collection[PeerId], scheme: SignatureScheme) -> bool:
    """Check a commit proof using nothing but the peer list."""
    known = _known(peers)
    votes = commit.votes
    if len(votes) < supermajority_threshold(len(known)):
        return False
    first = votes[0]
    if first.round != commit.round or first.block_hash != commit.block_hash:
        return False
    signers = set()
    for v in votes:
        if v.round != first.round or v.proposal_hash != first.proposal_hash or v.block_hash != first.block_hash:
            return False
        if v.signer in signers or v.signer not in known:
            return False
        if not scheme.verify(v.signer, v.payload, v.signature):
            return False
        signers.add(v.signer)
    return True


def detect_reject(buckets: Mapping[Hashable, Collection[Hashable]], n: int) -> bool:
    """True when no block hash can still reach the supermajority.

    ``buckets`` maps each block hash to the signers that voted for it in one
    round. A peer voting under several hashes is one voter but counts in every
    bucket it appears in.
    """
    largest = 0
    voters = set()
    for signers in buckets.values():
        largest = max(largest, len(signers))
        voters.update(signers)
    missing = n - len(voters)
    return largest + missing < supermajority_threshold(n)


def reject_buckets(votes: Collection[Vote]) -> dict:
    buckets: dict = {}
    for v in votes:
        buckets.setdefault(v.block_hash, set()).add(v.signer)
    return buckets


def verify_reject(reject: RejectMessage, peers: Collection[PeerId], scheme: SignatureScheme) -> bool:
    """Signatures check out, signers are distinct and known, and the votes witness a reject."""
    known = _known(peers)
    signers = set()
    for v in reject.votes:
        if v.round != reject.round or v.signer in signers or v.signer not in known:
            return False
        if not scheme.verify(v.signer, v.payload, v.signature):
            return False
        signers.add(v.signer)
    return detect_reject(reject_buckets(reject.votes), len(known))
