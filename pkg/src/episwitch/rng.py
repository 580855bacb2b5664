"""Reproducible random streams.

Every stream is Philox-4x64-10 (numpy's ``Philox`` bit generator) keyed by
the pair ``(seed, stream_index)``.  Independent sub-streams of one stream
(epidemic events, environment, initial conditions, ...) are obtained by
setting the most significant counter word, which separates them by 2**192
draws.  Only ``Generator.random`` and ``Generator.integers`` are used so
that the uniform sequence, and hence every path, is identical across
platforms.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

EPIDEMIC = 0
ENVIRONMENT = 1
INITIAL = 2
BOOTSTRAP = 3

ALGORITHM = "numpy.random.Philox(key=[seed, stream_index], counter=[0, 0, 0, substream])"

_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_index: int = 0

    def __post_init__(self):
        for v in (self.seed, self.stream_index):
            if not 0 <= v <= _MASK:
                raise ValueError("seed and stream_index must be unsigned 64-bit integers")

    def generator(self, substream=EPIDEMIC) -> np.random.Generator:
        key = np.array([self.seed, self.stream_index], dtype=np.uint64)
        counter = np.array([0, 0, 0, substream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))

    def child(self, index) -> "RngStream":
        """Stream for replicate ``index`` of a batch started from this stream."""
        return RngStream(derive_seed(self.seed, f"{self.stream_index}/{index}"), index)


def derive_seed(base_seed, label) -> int:
    """Deterministic 64-bit seed for a named purpose (blake2b of ``base:label``)."""
    digest = hashlib.blake2b(f"{base_seed}:{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def exponentials(gen, n):
    return -np.log1p(-gen.random(n))
