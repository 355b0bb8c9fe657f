import hashlib
import random

import pytest

from yac.crypto import SIM_SCHEME, Hash, PeerId, SimScheme, hash_bytes

S = SIM_SCHEME


def test_hash_is_deterministic():
    assert hash_bytes(b"proposal-1") == hash_bytes(b"proposal-1")


def test_empty_payload_digest_is_fixed():
    # independent oracle: the same 32-byte BLAKE2b straight from hashlib
    assert hash_bytes(b"").digest == hashlib.blake2b(b"", digest_size=32).digest()
    assert hash_bytes(b"").hex() == (
        "0e5751c026e543b2e8ab2eb06099daa1d1e5df47778f7787faab45cdf12fe3a8")


def test_single_byte_flips_never_collide():
    rng = random.Random(7)
    base = bytes(rng.randrange(256) for _ in range(64))
    payloads = {base}
    for _ in range(10_000):
        buf = bytearray(base)
        buf[rng.randrange(len(buf))] ^= rng.randrange(1, 256)
        payloads.add(bytes(buf))
    digests = {hash_bytes(p) for p in payloads}
    assert len(digests) == len(payloads)


def test_hash_ordering_and_short_form():
    a, b = Hash(bytes(32)), Hash(b"\x01" + bytes(31))
    assert a < b
    assert a.short() == "00000000"
    with pytest.raises(ValueError):
        Hash(b"short")


def test_sign_verify_round_trip():
    key = S.keypair(b"seed-a", "a")
    sig = S.sign(key, b"any payload at all")
    assert S.verify(key.peer, b"any payload at all", sig)


def test_flipped_payload_bytes_are_rejected():
    rng = random.Random(11)
    key = S.keypair(b"seed-a", "a")
    payload = bytes(rng.randrange(256) for _ in range(48))
    sig = S.sign(key, payload)
    for _ in range(1000):
        buf = bytearray(payload)
        buf[rng.randrange(len(buf))] ^= rng.randrange(1, 256)
        assert not S.verify(key.peer, bytes(buf), sig)


def test_other_peers_key_is_rejected():
    a = S.keypair(b"seed-a", "a")
    b = S.keypair(b"seed-b", "b")
    sig = S.sign(a, b"payload")
    assert not S.verify(b.peer, b"payload", sig)


def test_unknown_public_key_is_rejected():
    a = S.keypair(b"seed-a", "a")
    sig = S.sign(a, b"payload")
    assert not S.verify(PeerId(b"\x00" * 32), b"payload", sig)


def test_keypairs_are_stable_and_name_is_cosmetic():
    one = SimScheme().keypair(b"same", "x")
    two = SimScheme().keypair(b"same", "y")
    assert one.peer == two.peer
    assert repr(one.peer) == "x"


def test_ed25519_scheme_round_trip():
    pytest.importorskip("cryptography")
    from yac.crypto import Ed25519Scheme

    scheme = Ed25519Scheme()
    key = scheme.keypair(b"seed", "ed")
    sig = scheme.sign(key, b"payload")
    assert scheme.verify(key.peer, b"payload", sig)
    assert not scheme.verify(key.peer, b"payloaD", sig)
    other = scheme.keypair(b"other", "o")
    assert not scheme.verify(other.peer, b"payload", sig)
