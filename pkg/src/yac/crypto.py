"""Hashing and pluggable signature schemes.

The simulation scheme is a keyed BLAKE2b MAC with a private key registry:
signing requires the secret, verification looks the secret up from the
public key. Nobody outside the registry can produce a verifying tag, which
is all the protocol needs from signatures inside a simulation.
"""
from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field
from typing import Protocol

HASH_SIZE = 32
KEY_SIZE = 32


@dataclass(frozen=True, order=True)
class Hash:
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != HASH_SIZE:
            raise ValueError(f"hash must be {HASH_SIZE} bytes, got {len(self.digest)}")

    def hex(self) -> str:
        return self.digest.hex()

    def short(self) -> str:
        return self.digest[:4].hex()

    def __repr__(self) -> str:
        return f"Hash({self.short()})"


ZERO_HASH = Hash(bytes(HASH_SIZE))


def hash_bytes(payload: bytes) -> Hash:
    return Hash(hashlib.blake2b(payload, digest_size=HASH_SIZE).digest())


@dataclass(frozen=True)
class PeerId:
    """Public identity of a peer or client. Ordered by public key bytes."""

    public_key: bytes
    display_name: str = field(default="", compare=False)

    def __lt__(self, other: "PeerId") -> bool:
        return self.public_key < other.public_key

    def __le__(self, other: "PeerId") -> bool:
        return self.public_key <= other.public_key

    def __gt__(self, other: "PeerId") -> bool:
        return self.public_key > other.public_key

    def __ge__(self, other: "PeerId") -> bool:
        return self.public_key >= other.public_key

    def __repr__(self) -> str:
        return self.display_name or self.public_key[:4].hex()


@dataclass(frozen=True)
class Signature:
    data: bytes
    signer: PeerId


@dataclass(frozen=True)
class KeyPair:
    peer: PeerId
    secret: bytes = field(repr=False)


class SignatureScheme(Protocol):
    name: str

    def keypair(self, seed: bytes, display_name: str = "") -> KeyPair: ...

    def sign(self, key: KeyPair, payload: bytes) -> Signature: ...

    def verify(self, peer: PeerId, payload: bytes, sig: Signature) -> bool: ...


class SimScheme:
    """Fast deterministic keyed-digest signatures for simulation."""

    name = "sim-blake2b"

    def __init__(self):
        self._secrets: dict[bytes, bytes] = {}

    def keypair(self, seed: bytes, display_name: str = "") -> KeyPair:
        secret = hashlib.blake2b(seed, digest_size=KEY_SIZE, person=b"yac-secret").digest()
        public = hashlib.blake2b(secret, digest_size=KEY_SIZE, person=b"yac-public").digest()
        self._secrets[public] = secret
        return KeyPair(PeerId(public, display_name), secret)

    def sign(self, key: KeyPair, payload: bytes) -> Signature:
        tag = hashlib.blake2b(payload, digest_size=32, key=key.secret).digest()
        return Signature(tag, key.peer)

    def verify(self, peer: PeerId, payload: bytes, sig: Signature) -> bool:
        if sig.signer.public_key != peer.public_key:
            return False
        secret = self._secrets.get(peer.public_key)
        if secret is None or len(sig.data) != 32:
            return False
        expected = hashlib.blake2b(payload, digest_size=32, key=secret).digest()
        return hmac.compare_digest(expected, sig.data)


class Ed25519Scheme:
    """Real signatures via the ``cryptography`` package. Slow; not used by the simulator by default."""

    name = "ed25519"

    def __init__(self):
        from cryptography.hazmat.primitives.asymmetric import ed25519

        self._ed25519 = ed25519

    def keypair(self, seed: bytes, display_name: str = "") -> KeyPair:
        from cryptography.hazmat.primitives import serialization

        secret = hashlib.blake2b(seed, digest_size=32, person=b"yac-ed25519").digest()
        private = self._ed25519.Ed25519PrivateKey.from_private_bytes(secret)
        public = private.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return KeyPair(PeerId(public, display_name), secret)

    def sign(self, key: KeyPair, payload: bytes) -> Signature:
        private = self._ed25519.Ed25519PrivateKey.from_private_bytes(key.secret)
        return Signature(private.sign(payload), key.peer)

    def verify(self, peer: PeerId, payload: bytes, sig: Signature) -> bool:
        from cryptography.exceptions import InvalidSignature

        if sig.signer.public_key != peer.public_key:
            return False
        try:
            public = self._ed25519.Ed25519PublicKey.from_public_bytes(peer.public_key)
            public.verify(sig.data, payload)
        except (InvalidSignature, ValueError):
            return False
        return True


# Shared by every simulation in the process; keys are derived from seeds, so
# re-registering the same seed is harmless.
SIM_SCHEME = SimScheme()
