"""Seeded, resumable random number streams.

Every sampling routine in this package takes an explicit RngStream so that a
run is a pure function of (seed, stream layout, call sequence).  Distinct
stream ids index statistically independent substreams of the same seed.
"""

from __future__ import annotations

import numpy as np


class RngStream:
    """A PCG64 generator addressed by (seed, stream_id).

    Identical (seed, stream_id, call sequence) reproduces draws bit-exactly.
    The underlying bit-generator state can be captured and restored, which is
    what checkpoint resume relies on.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def substream(self, stream_id: int) -> "RngStream":
        """A fresh independent stream under the same seed."""
        return RngStream(self.seed, stream_id)

    @property
    def state(self) -> dict:
        return self.gen.bit_generator.state

    @state.setter
    def state(self, value: dict) -> None:
        self.gen.bit_generator.state = value

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"
