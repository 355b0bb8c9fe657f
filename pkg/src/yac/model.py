"""Protocol value types and their canonical binary form.

Canonical form: a one-byte type tag, then fields in declaration order.
Integers are little-endian fixed width, byte strings and text carry a u32
length prefix, hashes are raw 32 bytes, and vote sets are sorted by the
signer's public key.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Union

from .crypto import HASH_SIZE, Hash, KeyPair, PeerId, Signature, SignatureScheme, hash_bytes

TAG_PEER = 0x01
TAG_SIGNATURE = 0x02
TAG_TRANSFER = 0x10
TAG_CREATE_ACCOUNT = 0x11
TAG_TRANSACTION = 0x12
TAG_TX_PAYLOAD = 0x13
TAG_PROPOSAL = 0x20
TAG_BLOCK = 0x21
TAG_BLOCK_CORE = 0x22
TAG_VOTE = 0x30
TAG_VOTE_PAYLOAD = 0x31
TAG_COMMIT = 0x32
TAG_REJECT = 0x33
TAG_CATCH_UP = 0x34


class DecodeError(ValueError):
    pass


# -- commands and transactions ------------------------------------------------


@dataclass(frozen=True)
class Transfer:
    src: str
    dst: str
    amount: int


@dataclass(frozen=True)
class CreateAccount:
    name: str


Command = Union[Transfer, CreateAccount]


@dataclass(frozen=True)
class Transaction:
    """A client-signed command.

    ``nonce`` distinguishes otherwise identical commands from the same
    creator; ``id`` is the hash of the canonical form of every other field.
    """

    id: Hash
    creator: str
    command: Command
    nonce: int
    client_signature: Signature

    @cached_property
    def signing_payload(self) -> bytes:
        return tx_signing_payload(self.creator, self.command, self.nonce)

    def expected_id(self) -> Hash:
        w = _Writer()
        w.u8(TAG_TRANSACTION)
        w.text(self.creator)
        _write_command(w, self.command)
        w.i64(self.nonce)
        _write_signature(w, self.client_signature)
        return hash_bytes(w.getvalue())


def tx_signing_payload(creator: str, command: Command, nonce: int) -> bytes:
    w = _Writer()
    w.u8(TAG_TX_PAYLOAD)
    w.text(creator)
    _write_command(w, command)
    w.i64(nonce)
    return w.getvalue()


def make_transaction(
    scheme: SignatureScheme, key: KeyPair, creator: str, command: Command, nonce: int
) -> Transaction:
    sig = scheme.sign(key, tx_signing_payload(creator, command, nonce))
    partial = Transaction(Hash(bytes(HASH_SIZE)), creator, command, nonce, sig)
    return Transaction(partial.expected_id(), creator, command, nonce, sig)


# -- proposals and blocks -----------------------------------------------------


@dataclass(frozen=True)
class Proposal:
    round: int
    transactions: tuple[Transaction, ...]
    created_at: int = 0

    @cached_property
    def hash(self) -> Hash:
        return hash_bytes(canonical_serialize(self))


@dataclass(frozen=True)
class Block:
    proposal_hash: Hash
    transactions: tuple[Transaction, ...]
    height: int
    prev_block_hash: Hash
    block_hash: Hash

    def expected_hash(self) -> Hash:
        return compute_block_hash(self.proposal_hash, self.transactions, self.height, self.prev_block_hash)


def compute_block_hash(
    proposal_hash: Hash, transactions: Iterable[Transaction], height: int, prev_block_hash: Hash
) -> Hash:
    w = _Writer()
    w.u8(TAG_BLOCK_CORE)
    w.hash(proposal_hash)
    txs = list(transactions)
    w.u32(len(txs))
    for tx in txs:
        _write_transaction(w, tx)
    w.u64(height)
    w.hash(prev_block_hash)
    return hash_bytes(w.getvalue())


def make_block(
    proposal_hash: Hash, transactions: Iterable[Transaction], height: int, prev_block_hash: Hash
) -> Block:
    txs = tuple(transactions)
    return Block(proposal_hash, txs, height, prev_block_hash,
                 compute_block_hash(proposal_hash, txs, height, prev_block_hash))


# -- votes and quorum certificates --------------------------------------------


@dataclass(frozen=True)
class Vote:
    round: int
    proposal_hash: Hash
    block_hash: Hash
    signature: Signature

    @property
    def signer(self) -> PeerId:
        return self.signature.signer

    @cached_property
    def payload(self) -> bytes:
        return vote_payload(self.round, self.proposal_hash, self.block_hash)


def vote_payload(round: int, proposal_hash: Hash, block_hash: Hash) -> bytes:
    return (
        struct.pack("<BQ", TAG_VOTE_PAYLOAD, round)
        + proposal_hash.digest
        + block_hash.digest
    )


def make_vote(scheme: SignatureScheme, key: KeyPair, round: int, proposal_hash: Hash, block_hash: Hash) -> Vote:
    return Vote(round, proposal_hash, block_hash,
                scheme.sign(key, vote_payload(round, proposal_hash, block_hash)))


def _sorted_votes(votes: Iterable[Vote]) -> tuple[Vote, ...]:
    return tuple(sorted(votes, key=lambda v: (v.signer.public_key, v.block_hash.digest, v.signature.data)))


@dataclass(frozen=True)
class CommitMessage:
    """Supermajority vote set for one block hash.

    ``body`` optionally carries the committed block so peers that computed a
    different block can still apply it. It is not part of the proof.
    """

    round: int
    block_hash: Hash
    votes: tuple[Vote, ...]
    body: Optional[Block] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "votes", _sorted_votes(self.votes))

    def with_body(self, block: Optional[Block]) -> "CommitMessage":
        return CommitMessage(self.round, self.block_hash, self.votes, block)

    def without_body(self) -> "CommitMessage":
        return self if self.body is None else CommitMessage(self.round, self.block_hash, self.votes)


@dataclass(frozen=True)
class RejectMessage:
    round: int
    votes: tuple[Vote, ...]

    def __post_init__(self):
        object.__setattr__(self, "votes", _sorted_votes(self.votes))


@dataclass(frozen=True)
class CatchUp:
    """Consecutive commits forwarded to a peer lagging by more than one round."""

    commits: tuple[CommitMessage, ...]


Message = Union[Proposal, Vote, CommitMessage, RejectMessage, CatchUp]


# -- encoding -----------------------------------------------------------------


class _Writer:
    __slots__ = ("buf",)

    def __init__(self):
        self.buf = bytearray()

    def u8(self, v: int):
        self.buf += struct.pack("<B", v)

    def u32(self, v: int):
        self.buf += struct.pack("<I", v)

    def u64(self, v: int):
        self.buf += struct.pack("<Q", v)

    def i64(self, v: int):
        self.buf += struct.pack("<q", v)

    def blob(self, b: bytes):
        self.u32(len(b))
        self.buf += b

    def text(self, s: str):
        self.blob(s.encode("utf-8"))

    def hash(self, h: Hash):
        self.buf += h.digest

    def getvalue(self) -> bytes:
        return bytes(self.buf)


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated input")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self._take(8))[0]

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(str(exc)) from None

    def hash(self) -> Hash:
        return Hash(self._take(HASH_SIZE))

    def expect(self, tag: int):
        got = self.u8()
        if got != tag:
            raise DecodeError(f"expected tag {tag:#x}, got {got:#x}")

    def done(self):
        if self.pos != len(self.data):
            raise DecodeError(f"{len(self.data) - self.pos} trailing bytes")


def _write_peer(w: _Writer, p: PeerId):
    w.u8(TAG_PEER)
    w.blob(p.public_key)
    w.text(p.display_name)


def _read_peer(r: _Reader) -> PeerId:
    r.expect(TAG_PEER)
    return PeerId(r.blob(), r.text())


def _write_signature(w: _Writer, s: Signature):
    w.u8(TAG_SIGNATURE)
    w.blob(s.data)
    _write_peer(w, s.signer)


def _read_signature(r: _Reader) -> Signature:
    r.expect(TAG_SIGNATURE)
    data = r.blob()
    return Signature(data, _read_peer(r))


def _write_command(w: _Writer, c: Command):
    if isinstance(c, Transfer):
        w.u8(TAG_TRANSFER)
        w.text(c.src)
        w.text(c.dst)
        w.i64(c.amount)
    elif isinstance(c, CreateAccount):
        w.u8(TAG_CREATE_ACCOUNT)
        w.text(c.name)
    else:
        raise TypeError(f"unknown command {c!r}")


def _read_command(r: _Reader) -> Command:
    tag = r.u8()
    if tag == TAG_TRANSFER:
        return Transfer(r.text(), r.text(), r.i64())
    if tag == TAG_CREATE_ACCOUNT:
        return CreateAccount(r.text())
    raise DecodeError(f"unknown command tag {tag:#x}")


def _write_transaction(w: _Writer, tx: Transaction):
    w.u8(TAG_TRANSACTION)
    w.hash(tx.id)
    w.text(tx.creator)
    _write_command(w, tx.command)
    w.i64(tx.nonce)
    _write_signature(w, tx.client_signature)


def _read_transaction(r: _Reader) -> Transaction:
    r.expect(TAG_TRANSACTION)
    tx_id = r.hash()
    creator = r.text()
    command = _read_command(r)
    nonce = r.i64()
    return Transaction(tx_id, creator, command, nonce, _read_signature(r))


def _write_txs(w: _Writer, txs):
    w.u32(len(txs))
    for tx in txs:
        _write_transaction(w, tx)


def _read_txs(r: _Reader) -> tuple[Transaction, ...]:
    return tuple(_read_transaction(r) for _ in range(r.u32()))


def _write_block(w: _Writer, b: Block):
    w.u8(TAG_BLOCK)
    w.hash(b.proposal_hash)
    _write_txs(w, b.transactions)
    w.u64(b.height)
    w.hash(b.prev_block_hash)
    w.hash(b.block_hash)


def _read_block(r: _Reader) -> Block:
    r.expect(TAG_BLOCK)
    ph = r.hash()
    txs = _read_txs(r)
    height = r.u64()
    prev = r.hash()
    return Block(ph, txs, height, prev, r.hash())


def _write_vote(w: _Writer, v: Vote):
    w.u8(TAG_VOTE)
    w.u64(v.round)
    w.hash(v.proposal_hash)
    w.hash(v.block_hash)
    _write_signature(w, v.signature)


def _read_vote(r: _Reader) -> Vote:
    r.expect(TAG_VOTE)
    rnd = r.u64()
    ph = r.hash()
    bh = r.hash()
    return Vote(rnd, ph, bh, _read_signature(r))


def _write_votes(w: _Writer, votes):
    w.u32(len(votes))
    for v in _sorted_votes(votes):
        _write_vote(w, v)


def _read_votes(r: _Reader) -> tuple[Vote, ...]:
    return tuple(_read_vote(r) for _ in range(r.u32()))


def _write_commit(w: _Writer, c: CommitMessage):
    w.u8(TAG_COMMIT)
    w.u64(c.round)
    w.hash(c.block_hash)
    _write_votes(w, c.votes)
    if c.body is None:
        w.u8(0)
    else:
        w.u8(1)
        _write_block(w, c.body)


def _read_commit(r: _Reader) -> CommitMessage:
    r.expect(TAG_COMMIT)
    rnd = r.u64()
    bh = r.hash()
    votes = _read_votes(r)
    flag = r.u8()
    if flag not in (0, 1):
        raise DecodeError("bad body flag")
    body = _read_block(r) if flag else None
    return CommitMessage(rnd, bh, votes, body)


def _write_value(w: _Writer, value):
    if isinstance(value, Vote):
        _write_vote(w, value)
    elif isinstance(value, CommitMessage):
        _write_commit(w, value)
    elif isinstance(value, Block):
        _write_block(w, value)
    elif isinstance(value, Transaction):
        _write_transaction(w, value)
    elif isinstance(value, Proposal):
        w.u8(TAG_PROPOSAL)
        w.u64(value.round)
        _write_txs(w, value.transactions)
        w.u64(value.created_at)
    elif isinstance(value, RejectMessage):
        w.u8(TAG_REJECT)
        w.u64(value.round)
        _write_votes(w, value.votes)
    elif isinstance(value, CatchUp):
        w.u8(TAG_CATCH_UP)
        w.u32(len(value.commits))
        for c in value.commits:
            _write_commit(w, c)
    elif isinstance(value, Signature):
        _write_signature(w, value)
    elif isinstance(value, PeerId):
        _write_peer(w, value)
    elif isinstance(value, (Transfer, CreateAccount)):
        _write_command(w, value)
    else:
        raise TypeError(f"cannot serialize {type(value).__name__}")


def canonical_serialize(value) -> bytes:
    w = _Writer()
    _write_value(w, value)
    return w.getvalue()


_READERS = {
    TAG_PEER: _read_peer,
    TAG_SIGNATURE: _read_signature,
    TAG_TRANSFER: _read_command,
    TAG_CREATE_ACCOUNT: _read_command,
    TAG_TRANSACTION: _read_transaction,
    TAG_BLOCK: _read_block,
    TAG_VOTE: _read_vote,
    TAG_COMMIT: _read_commit,
}


def deserialize(data: bytes):
    """Inverse of :func:`canonical_serialize` for every protocol type."""
    if not data:
        raise DecodeError("empty input")
    r = _Reader(data)
    tag = data[0]
    if tag in _READERS:
        value = _READERS[tag](r)
    elif tag == TAG_PROPOSAL:
        r.u8()
        rnd = r.u64()
        txs = _read_txs(r)
        value = Proposal(rnd, txs, r.u64())
    elif tag == TAG_REJECT:
        r.u8()
        rnd = r.u64()
        value = RejectMessage(rnd, _read_votes(r))
    elif tag == TAG_CATCH_UP:
        r.u8()
        value = CatchUp(tuple(_read_commit(r) for _ in range(r.u32())))
    else:
        raise DecodeError(f"unknown tag {tag:#x}")
    r.done()
    return value


# -- debug rendering ----------------------------------------------------------


def render(value) -> str:
    """Human-readable one-liner. Not canonical."""
    if isinstance(value, Vote):
        return f"vote(r={value.round} {value.block_hash.short()} by {value.signer!r})"
    if isinstance(value, CommitMessage):
        body = "+body" if value.body is not None else ""
        return f"commit(r={value.round} {value.block_hash.short()} n={len(value.votes)}{body})"
    if isinstance(value, RejectMessage):
        return f"reject(r={value.round} n={len(value.votes)})"
    if isinstance(value, CatchUp):
        rounds = [c.round for c in value.commits]
        return f"catch-up(r={rounds[0]}..{rounds[-1]})" if rounds else "catch-up()"
    if isinstance(value, Proposal):
        return f"proposal(r={value.round} txs={len(value.transactions)})"
    if isinstance(value, Block):
        return f"block(h={value.height} {value.block_hash.short()} txs={len(value.transactions)})"
    if isinstance(value, Transaction):
        return f"tx({value.id.short()} {value.command})"
    return repr(value)
