"""Hash-seeded peer permutation used to route votes."""
from __future__ import annotations

from typing import Sequence

from .crypto import Hash, PeerId
from .errors import Fault

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """Tiny 64-bit generator; stable across platforms and Python versions."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection sampling."""
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % bound


def peer_order(block_hash: Hash, peers: Sequence[PeerId]) -> tuple[PeerId, ...]:
    """Fisher-Yates shuffle of the canonical peer list, seeded by the first 8 bytes of ``block_hash``."""
    if not peers:
        raise Fault("empty-network", "peer list is empty")
    rng = SplitMix64(int.from_bytes(block_hash.digest[:8], "little"))
    out = list(peers)
    for i in range(len(out) - 1, 0, -1):
        j = rng.below(i + 1)
        out[i], out[j] = out[j], out[i]
    return tuple(out)
