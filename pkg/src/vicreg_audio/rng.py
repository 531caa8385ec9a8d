"""Counter-based random streams.

A stream is identified by a seed and a *lane*, a tuple of non-negative
integers such as ``(epoch, sample_index, op_id)``. The draws of a lane only
depend on ``(seed, lane)``, so work can be scheduled in any order or on any
number of threads without changing results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RandomStream:
    seed: int
    lane: tuple[int, ...] = ()

    def __post_init__(self):
        lane = tuple(int(v) for v in self.lane)
        if any(v < 0 for v in lane):
            raise ValueError(f"lane counters must be non-negative, got {lane}")
        object.__setattr__(self, "lane", lane)

    def child(self, *counters: int) -> "RandomStream":
        return RandomStream(self.seed, self.lane + tuple(counters))

    def generator(self, *counters: int) -> np.random.Generator:
        seq = np.random.SeedSequence(int(self.seed), spawn_key=self.lane + tuple(int(c) for c in counters))
        return np.random.Generator(np.random.PCG64(seq))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RandomStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
