import pytest

from yac.consensus import Alarm, ArmTimer, Broadcast, Commit, Phase, Send, YacPeer
from yac.crypto import hash_bytes
from yac.errors import Fault
from yac.ledger import Ledger
from yac.model import CatchUp, CommitMessage, RejectMessage, make_vote
from support import S, World

ORDER = ["clara", "deana", "alice", "bob"]


@pytest.fixture
def world():
    return World()


def sends(actions):
    return [(a.to.display_name, a.message) for a in actions if isinstance(a, Send)]


def test_vote_goes_to_first_peer_in_order(world):
    p = world.proposal_with_order(ORDER)
    alice = world.peers["alice"]
    actions = alice.on_proposal(p)
    [(to, vote)] = sends(actions)
    assert to == "clara"
    assert vote.block_hash == world.block_for(p).block_hash
    assert vote.signer == world.id("alice")
    assert ArmTimer(100, 0) in actions
    assert alice.phase is Phase.VOTING


def test_first_in_order_records_own_vote(world):
    p = world.proposal_with_order(ORDER)
    clara = world.peers["clara"]
    actions = clara.on_proposal(p)
    assert sends(actions) == []
    h = world.block_for(p).block_hash
    assert set(clara.votes.buckets[h]) == {world.id("clara")}


def test_proposal_two_rounds_ahead_is_dropped(world):
    alice = world.peers["alice"]
    assert alice.on_proposal(world.proposal(round=2)) == []
    assert alice.metrics["future-proposal"] == 1
    assert alice.phase is Phase.IDLE and not alice.buffered


def test_timer_walks_the_order_and_wraps(world):
    p = world.proposal_with_order(ORDER)
    alice = world.peers["alice"]
    alice.on_proposal(p)
    targets = []
    for _ in range(5):
        actions = alice.on_timer(0)
        assert ArmTimer(100, 0) in actions
        targets.append([to for to, _ in sends(actions)])
    # alice's own slot records locally, so it sends nothing that step
    assert targets == [["deana"], [], ["bob"], ["clara"], ["deana"]]


def test_stale_timer_does_nothing(world):
    p = world.proposal_with_order(ORDER)
    alice = world.peers["alice"]
    alice.on_proposal(p)
    alice.on_commit(world.commit(p, ["alice", "clara", "deana"]))
    assert alice.round == 1
    assert alice.on_timer(0) == []


def test_third_vote_makes_a_commit(world):
    p = world.proposal_with_order(ORDER)
    clara = world.peers["clara"]
    clara.on_proposal(p)
    assert clara.on_vote(world.vote("alice", p)) == []
    actions = clara.on_vote(world.vote("deana", p))
    [bc] = [a for a in actions if isinstance(a, Broadcast)]
    assert isinstance(bc.message, CommitMessage)
    assert len(bc.message.votes) == 3
    assert bc.message.body == world.block_for(p)
    [done] = [a for a in actions if isinstance(a, Commit)]
    assert not done.adopted
    assert clara.ledger.height == 1 and clara.round == 1


def test_stale_vote_is_answered_with_the_commit(world):
    p = world.proposal_with_order(ORDER)
    alice = world.peers["alice"]
    alice.on_proposal(p)
    block = world.block_for(p)
    alice.on_commit(world.commit(p, ["alice", "clara", "deana"]))
    bob_vote = make_vote(S, world.by_name["bob"], 0, p.hash, hash_bytes(b"H2"))
    [(to, msg)] = sends(alice.on_vote(bob_vote))
    assert to == "bob"
    assert isinstance(msg, CommitMessage)
    assert msg.block_hash == block.block_hash
    assert msg.body == block


def test_duplicate_vote_changes_nothing(world):
    p = world.proposal_with_order(ORDER)
    clara = world.peers["clara"]
    clara.on_proposal(p)
    v = world.vote("alice", p)
    clara.on_vote(v)
    before = clara.votes.signer_view()
    assert clara.on_vote(v) == []
    assert clara.votes.signer_view() == before


def test_equivocation_lands_in_both_buckets(world):
    p = world.proposal_with_order(ORDER)
    clara = world.peers["clara"]
    clara.on_proposal(p)
    h1 = world.block_for(p).block_hash
    h2 = hash_bytes(b"H2")
    clara.on_vote(world.vote("bob", p))
    clara.on_vote(world.vote("bob", p, block_hash=h2))
    bob = world.id("bob")
    assert bob in clara.votes.buckets[h1] and bob in clara.votes.buckets[h2]
    assert bob in clara.votes.equivocators


def test_bad_and_unknown_votes_are_counted(world):
    p = world.proposal_with_order(ORDER)
    clara = world.peers["clara"]
    clara.on_proposal(p)
    outsider = S.keypair(b"mallory", "mallory")
    assert clara.on_vote(make_vote(S, outsider, 0, p.hash, hash_bytes(b"x"))) == []
    v = world.vote("alice", p)
    wrong_payload = S.sign(world.by_name["bob"], b"something else")
    forged = type(v)(v.round, v.proposal_hash, v.block_hash, wrong_payload)
    assert clara.on_vote(forged) == []
    assert clara.metrics["unknown-signer"] == 1 and clara.metrics["bad-vote"] == 1


def test_peer_with_other_block_commits_forwarded_block(world):
    # Bob rejects every transaction, so he votes for a different block.
    bob_key = world.by_name["bob"]
    bob = YacPeer(bob_key, world.ids, Ledger(world.genesis, world.ids, S), S, 100,
                  tx_filter=lambda i, tx: True)
    p = world.proposal_with_order(ORDER)
    bob.on_proposal(p)
    assert bob.my_block.block_hash != world.block_for(p).block_hash
    actions = bob.on_commit(world.commit(p, ["alice", "clara", "deana"]))
    [done] = [a for a in actions if isinstance(a, Commit)]
    assert done.adopted
    assert bob.ledger.top_block_hash == world.block_for(p).block_hash
    assert bob.round == 1


def test_duplicate_commit_is_ignored(world):
    p = world.proposal_with_order(ORDER)
    alice = world.peers["alice"]
    alice.on_proposal(p)
    c = world.commit(p, ["alice", "clara", "deana"])
    alice.on_commit(c)
    state = alice.ledger.state
    assert alice.on_commit(c) == []
    assert alice.ledger.state is state
    assert alice.metrics["stale-commit"] == 1


def test_commit_mixing_hashes_is_bad(world):
    p = world.proposal_with_order(ORDER)
    alice = world.peers["alice"]
    alice.on_proposal(p)
    good = world.commit(p, ["alice", "clara"])
    mixed = CommitMessage(0, good.block_hash,
                          good.votes + (world.vote("deana", p, block_hash=hash_bytes(b"H2")),))
    assert alice.on_commit(mixed) == []
    assert alice.metrics["bad-commit"] == 1 and alice.round == 0


def test_commit_without_body_waits_for_one(world):
    bob = YacPeer(world.by_name["bob"], world.ids, Ledger(world.genesis, world.ids, S), S, 100,
                  tx_filter=lambda i, tx: True)
    p = world.proposal_with_order(ORDER)
    bob.on_proposal(p)
    bare = world.commit(p, ["alice", "clara", "deana"], with_body=False)
    assert bob.on_commit(bare) == []
    assert bob.metrics["missing-body"] == 1 and bob.round == 0
    assert any(isinstance(a, Commit) for a in bob.on_commit(world.commit(p, ["alice", "clara", "deana"])))


def test_commit_can_arrive_before_the_proposal(world):
    p = world.proposal_with_order(ORDER)
    alice = world.peers["alice"]
    assert alice.on_commit(world.commit(p, ["bob", "clara", "deana"], with_body=False)) == []
    actions = alice.on_proposal(p)
    assert any(isinstance(a, Commit) for a in actions)
    assert alice.round == 1


def test_next_round_messages_are_buffered_and_replayed(world):
    p0 = world.proposal_with_order(ORDER)
    alice = world.peers["alice"]
    alice.on_proposal(p0)
    # the round-1 proposal must be built on top of block 0
    ahead = World()
    ahead.peers["alice"].on_proposal(p0)
    ahead.peers["alice"].on_commit(ahead.commit(p0, ["alice", "clara", "deana"]))
    p1 = ahead.proposal(round=1, nonce=77)
    assert alice.on_proposal(p1) == []
    assert alice.metrics["buffered"] == 1
    actions = alice.on_commit(world.commit(p0, ["alice", "clara", "deana"]))
    assert alice.round == 1 and alice.phase is Phase.VOTING
    assert any(isinstance(a, ArmTimer) and a.token == 1 for a in actions)


def test_vote_far_ahead_makes_us_probe_its_signer_once(world):
    p = world.proposal_with_order(ORDER)
    alice = world.peers["alice"]
    alice.on_proposal(p)
    far = world.vote("bob", p, round=2)
    assert sends(alice.on_vote(far)) == [("bob", alice.my_vote)]
    assert sends(alice.on_vote(far)) == []
    assert alice.metrics["future-vote"] == 2 and alice.metrics["probe"] == 1


def test_idle_peer_probes_when_next_round_traffic_arrives(world):
    p0 = world.proposal_with_order(ORDER)
    alice = world.peers["alice"]
    alice.on_proposal(p0)
    alice.on_commit(world.commit(p0, ["alice", "clara", "deana"]))
    assert alice.round == 1 and alice.phase is Phase.IDLE
    last = alice.last_vote
    ahead = world.vote("deana", p0, round=2)
    assert sends(alice.on_vote(ahead)) == [("deana", last)]
    assert ahead in alice.buffered


def test_skipped_round_starts_a_sync_probe_chain(world):
    p0 = world.proposal_with_order(ORDER)
    alice = world.peers["alice"]
    # round 1 proposal is out of the buffer horizon while alice is at round 0
    alice.on_proposal(world.proposal(round=2))
    alice.on_proposal(p0)
    actions = alice.on_commit(world.commit(p0, ["alice", "clara", "deana"]))
    assert alice.round == 1 and alice.phase is Phase.IDLE
    ring = [p.display_name for p in sorted(world.ids)]
    start = ring.index("alice")
    expected = [ring[(start + k) % 4] for k in (1, 2, 3)]
    assert [to for to, _ in sends(actions)] == expected[:1]
    assert ArmTimer(100, -2) in actions
    got = [[to for to, _ in sends(alice.on_timer(-2))] for _ in range(2)]
    assert got == [expected[1:2], expected[2:3]]
    # once the round moves on the chain stops
    alice.round += 1
    assert alice.on_timer(-2) == []


def test_caught_up_peer_does_not_sync(world):
    p0 = world.proposal_with_order(ORDER)
    alice = world.peers["alice"]
    alice.on_proposal(p0)
    actions = alice.on_commit(world.commit(p0, ["alice", "clara", "deana"]))
    assert not any(isinstance(a, ArmTimer) and a.token < 0 for a in actions)
    assert sends(actions) == []


def run_rounds(world, rounds):
    """Drive every peer through ``rounds`` rounds by hand; returns the proposals."""
    props = []
    for r in range(rounds):
        p = world.proposal(round=r, nonce=r)
        for name, peer in world.peers.items():
            if name != "bob":
                peer.on_proposal(p)
        c = world.peers["alice"]
        block = c.my_block
        votes = tuple(make_vote(S, world.by_name[n], r, p.hash, block.block_hash)
                      for n in ("alice", "clara", "deana"))
        commit = CommitMessage(r, block.block_hash, votes, block)
        for name, peer in world.peers.items():
            if name != "bob":
                peer.on_commit(commit)
        props.append(p)
    return props


def test_lagging_voter_gets_a_catch_up_bundle(world):
    props = run_rounds(world, 3)
    alice = world.peers["alice"]
    assert alice.round == 3
    bob = world.peers["bob"]
    bob.on_proposal(props[0])
    stale = bob.my_vote
    [(to, msg)] = sends(alice.on_vote(stale))
    assert to == "bob" and isinstance(msg, CatchUp)
    assert [c.round for c in msg.commits] == [0, 1, 2]
    bob.on_catch_up(msg)
    assert bob.ledger.height == 3
    assert bob.ledger.block_hashes() == alice.ledger.block_hashes()


def reject_setup(world):
    p = world.proposal_with_order(ORDER)
    clara = world.peers["clara"]
    clara.on_proposal(p)
    votes = [make_vote(S, world.by_name[n], 0, p.hash, hash_bytes(n.encode()))
             for n in ("alice", "bob", "deana")]
    return p, clara, votes


def test_three_distinct_hashes_at_n4_raise_the_alarm(world):
    p, clara, votes = reject_setup(world)
    assert clara.on_vote(votes[0]) == []
    actions = clara.on_vote(votes[1])
    [bc] = [a for a in actions if isinstance(a, Broadcast)]
    assert isinstance(bc.message, RejectMessage)
    assert Alarm("bft-violation", 0) in actions
    assert clara.phase is Phase.HALTED
    assert clara.on_vote(votes[2]) == [] and clara.on_timer(0) == []


def test_valid_reject_halts_once(world):
    p, clara, votes = reject_setup(world)
    own = clara.my_vote
    reject = RejectMessage(0, tuple(votes[:2]) + (own,))
    alice = world.peers["alice"]
    alice.on_proposal(p)
    assert alice.on_reject(reject) == [Alarm("bft-violation", 0)]
    assert alice.phase is Phase.HALTED
    assert alice.on_reject(reject) == []


def test_reject_with_a_supermajority_is_bad(world):
    p = world.proposal_with_order(ORDER)
    alice = world.peers["alice"]
    alice.on_proposal(p)
    good = [world.vote(n, p) for n in ("alice", "clara", "deana")]
    other = make_vote(S, world.by_name["bob"], 0, p.hash, hash_bytes(b"x"))
    assert alice.on_reject(RejectMessage(0, tuple(good) + (other,))) == []
    assert alice.metrics["bad-reject"] == 1 and alice.phase is Phase.VOTING


def test_single_peer_network_commits_alone():
    w = World(names=("solo",), state=None)
    solo = w.peers["solo"]
    actions = solo.on_proposal(w.proposal())
    assert any(isinstance(a, Broadcast) for a in actions)
    assert any(isinstance(a, Commit) for a in actions)
    assert solo.round == 1


def test_peer_must_be_in_its_peer_list(world):
    stranger = S.keypair(b"stranger", "s")
    with pytest.raises(ValueError):
        YacPeer(stranger, world.ids, Ledger(world.genesis, world.ids, S), S, 100)
    with pytest.raises(Fault):
        YacPeer(stranger, [], Ledger(world.genesis, [], S), S, 100)
