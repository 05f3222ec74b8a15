"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, stream_id)`` with its
counter starting at zero, so a stream is a pure function of its key: asking
for the same stream twice yields the same draws, and a child stream never
shares mutable state with its parent.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at counter zero of this stream."""
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def split(self, index: int) -> "RngStream":
        """Child stream number ``index``; distinct indices give distinct keys."""
        ss = np.random.SeedSequence([self.stream_id, int(index) & _MASK64, 0x5EED])
        child = int(ss.generate_state(1, dtype=np.uint64)[0])
        return RngStream(self.seed, child)

    def substream(self, label: str) -> "RngStream":
        """Child stream named by a string label (stable across runs)."""
        h = hashlib.blake2b(label.encode("utf8"), digest_size=8).digest()
        return self.split(int.from_bytes(h, "little"))
