"""Small builders shared by the test modules."""
from yac.consensus import YacPeer
from yac.crypto import SIM_SCHEME
from yac.ledger import Ledger, WorldState, apply_proposal, build_block
from yac.model import CommitMessage, Proposal, Transfer, make_transaction, make_vote
from yac.order import peer_order

S = SIM_SCHEME
NAMES = ("alice", "bob", "clara", "deana")


def keys(names=NAMES, tag="test"):
    return [S.keypair(f"{tag}:{n}".encode(), n) for n in names]


def client(name):
    return S.keypair(f"client:{name}".encode(), name)


def transfer(src, dst, amount, nonce=0, key=None):
    return make_transaction(S, key or client(src), src, Transfer(src, dst, amount), nonce)


def genesis(**balances):
    return WorldState(dict(balances or {"alice": 100, "bob": 100, "carol": 100}))


class World:
    """Four peers (or any names) sharing a genesis state, driven by hand."""

    def __init__(self, names=NAMES, delay=100, state=None, tag="test"):
        self.keys = keys(names, tag)
        self.ids = [k.peer for k in self.keys]
        self.genesis = state or genesis()
        self.by_name = {k.peer.display_name: k for k in self.keys}
        self.peers = {
            k.peer.display_name: YacPeer(k, self.ids, Ledger(self.genesis, self.ids, S), S, delay)
            for k in self.keys
        }

    def id(self, name):
        return self.by_name[name].peer

    def proposal(self, round=0, nonce=0, n_tx=1):
        txs = tuple(transfer("alice", "bob", 1, nonce=nonce * 100 + i) for i in range(n_tx))
        return Proposal(round, txs, created_at=nonce)

    def block_for(self, proposal, name="alice"):
        ledger = self.peers[name].ledger
        vp, _ = apply_proposal(ledger.state, proposal, S)
        return build_block(vp, ledger.state)

    def order_names(self, proposal):
        block = self.block_for(proposal)
        return [p.display_name for p in peer_order(block.block_hash, sorted(self.ids))]

    def proposal_with_order(self, wanted, round=0):
        """Search nonces until the proposal's block orders peers as ``wanted``."""
        for nonce in range(5000):
            p = self.proposal(round, nonce)
            if self.order_names(p)[:len(wanted)] == list(wanted):
                return p
        raise AssertionError(f"no proposal found with order {wanted}")

    def vote(self, name, proposal, block_hash=None, round=None):
        block = self.block_for(proposal)
        return make_vote(S, self.by_name[name], proposal.round if round is None else round,
                         proposal.hash, block_hash or block.block_hash)

    def commit(self, proposal, names, with_body=True):
        block = self.block_for(proposal)
        votes = tuple(self.vote(n, proposal) for n in names)
        return CommitMessage(proposal.round, block.block_hash, votes, block if with_body else None)
