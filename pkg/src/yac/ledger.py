"""World state, transaction validation, block construction and the block store."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .crypto import ZERO_HASH, Hash, PeerId, SignatureScheme
from .errors import Fault
from .model import (
    Block,
    CommitMessage,
    CreateAccount,
    Proposal,
    Transaction,
    Transfer,
    canonical_serialize,
    deserialize,
    make_block,
)
from .quorum import verify_commit


@dataclass(frozen=True)
class WorldState:
    accounts: Mapping[str, int] = field(default_factory=dict)
    height: int = 0
    top_block_hash: Hash = ZERO_HASH


@dataclass(frozen=True)
class VerifiedProposal:
    proposal_hash: Hash
    valid_transactions: tuple[Transaction, ...]


@dataclass(frozen=True)
class BlockStore:
    blocks: tuple[tuple[Block, CommitMessage], ...] = ()

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def top(self) -> Optional[Block]:
        return self.blocks[-1][0] if self.blocks else None


# Fault-injection hook: (index in proposal, tx) -> True to reject the tx.
TxFilter = Callable[[int, Transaction], bool]


def stateless_validate(tx: Transaction, scheme: SignatureScheme) -> bool:
    """Well-formedness only: identifiers, amounts, id binding and client signature."""
    cmd = tx.command
    if not tx.creator:
        return False
    if isinstance(cmd, Transfer):
        if not cmd.src or not cmd.dst or cmd.amount < 0:
            return False
    elif isinstance(cmd, CreateAccount):
        if not cmd.name:
            return False
    else:
        return False
    if tx.expected_id() != tx.id:
        return False
    signer = tx.client_signature.signer
    return scheme.verify(signer, tx.signing_payload, tx.client_signature)


def _apply_tx(accounts: dict[str, int], tx: Transaction) -> bool:
    """Apply ``tx`` to ``accounts`` in place if the stateful rules allow it."""
    cmd = tx.command
    if isinstance(cmd, Transfer):
        if cmd.src != tx.creator or cmd.src not in accounts or cmd.dst not in accounts:
            return False
        if accounts[cmd.src] - cmd.amount < 0:
            return False
        accounts[cmd.src] -= cmd.amount
        accounts[cmd.dst] += cmd.amount
        return True
    if isinstance(cmd, CreateAccount):
        if cmd.name in accounts:
            return False
        accounts[cmd.name] = 0
        return True
    return False


def apply_proposal(
    state: WorldState,
    proposal: Proposal,
    scheme: SignatureScheme,
    tx_filter: Optional[TxFilter] = None,
) -> tuple[VerifiedProposal, WorldState]:
    """Filter a proposal down to the transactions valid against ``state``.

    Transactions are tried in proposal order on a scratch copy; later ones see
    the effects of earlier accepted ones. ``state`` itself is not touched.
    """
    accounts = dict(state.accounts)
    valid = []
    for i, tx in enumerate(proposal.transactions):
        if tx_filter is not None and tx_filter(i, tx):
            continue
        if not stateless_validate(tx, scheme):
            continue
        if _apply_tx(accounts, tx):
            valid.append(tx)
    vp = VerifiedProposal(proposal.hash, tuple(valid))
    return vp, replace(state, accounts=accounts)


def build_block(vp: VerifiedProposal, state: WorldState) -> Block:
    return make_block(vp.proposal_hash, vp.valid_transactions, state.height, state.top_block_hash)


def apply_block(state: WorldState, block: Block) -> WorldState:
    accounts = dict(state.accounts)
    for tx in block.transactions:
        if not _apply_tx(accounts, tx):
            raise Fault("invalid-block", f"tx {tx.id.short()} does not apply at height {block.height}")
    return WorldState(accounts, state.height + 1, block.block_hash)


def commit_block(
    store: BlockStore,
    state: WorldState,
    block: Block,
    commit: CommitMessage,
    peers: Sequence[PeerId],
    scheme: SignatureScheme,
) -> tuple[BlockStore, WorldState]:
    if block.prev_block_hash != state.top_block_hash or block.height != state.height:
        raise Fault("chain-gap", f"block {block.block_hash.short()} does not extend height {state.height}")
    if block.expected_hash() != block.block_hash:
        raise Fault("bad-commit", "block hash does not match block contents")
    if commit.block_hash != block.block_hash or not verify_commit(commit, peers, scheme):
        raise Fault("bad-commit", f"commit proof for {commit.block_hash.short()} rejected")
    new_state = apply_block(state, block)
    return BlockStore(store.blocks + ((block, commit.without_body()),)), new_state


def replay(store: BlockStore, genesis: WorldState) -> WorldState:
    state = genesis
    for block, _ in store.blocks:
        if block.prev_block_hash != state.top_block_hash:
            raise Fault("chain-gap", f"stored block at height {block.height} breaks the chain")
        state = apply_block(state, block)
    return state


class Ledger:
    """One peer's committed chain plus its current world state."""

    def __init__(self, genesis: WorldState, peers: Sequence[PeerId], scheme: SignatureScheme):
        self.genesis = genesis
        self.peers = tuple(peers)
        self.scheme = scheme
        self.store = BlockStore()
        self.state = genesis

    @property
    def height(self) -> int:
        return self.state.height

    @property
    def top_block_hash(self) -> Hash:
        return self.state.top_block_hash

    def commit(self, block: Block, commit: CommitMessage):
        self.store, self.state = commit_block(self.store, self.state, block, commit, self.peers, self.scheme)

    def entry(self, height: int) -> tuple[Block, CommitMessage]:
        return self.store.blocks[height - self.genesis.height]

    def block_hashes(self) -> list[Hash]:
        return [b.block_hash for b, _ in self.store.blocks]


def export_store(store: BlockStore, path: Path | str):
    """Write one ``<hex block> <hex commit>`` line per committed block."""
    lines = [
        f"{canonical_serialize(block).hex()} {canonical_serialize(commit).hex()}\n"
        for block, commit in store.blocks
    ]
    Path(path).write_text("".join(lines))


def import_store(path: Path | str) -> BlockStore:
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            block_hex, commit_hex = line.split()
            block = deserialize(bytes.fromhex(block_hex))
            commit = deserialize(bytes.fromhex(commit_hex))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        if not isinstance(block, Block) or not isinstance(commit, CommitMessage):
            raise ValueError(f"{path}:{lineno}: expected block and commit")
        entries.append((block, commit))
    return BlockStore(tuple(entries))


def audit_store(store: BlockStore, genesis: WorldState, peers: Sequence[PeerId],
                scheme: SignatureScheme) -> WorldState:
    """Re-verify every link and proof in ``store``; returns the replayed state."""
    state = genesis
    for block, commit in store.blocks:
        _, state = commit_block(BlockStore(), state, block, commit, peers, scheme)
    return state


def genesis_state(balances: Iterable[tuple[str, int]]) -> WorldState:
    return WorldState(dict(balances))
