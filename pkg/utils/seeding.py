# utils/seeding.py
#
# Counter-based stream splitting on top of numpy.random.SeedSequence.
#
# Every random draw in the package comes from a generator keyed by
# (master seed, purpose, *indices). Nothing is drawn from a shared, advancing
# generator, so two runs that must share a stream (same Brownian path for
# several M, nested particles for several N) get it by construction.

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PURPOSES = {
    "init": 0,
    "brownian": 1,
    "subsample": 2,
    "job": 3,
}


def _purpose_code(purpose: str) -> int:
    try:
        return PURPOSES[purpose]
    except KeyError:
        raise ValueError(f'Unknown stream purpose "{purpose}" (expected one of {sorted(PURPOSES)})') from None


@dataclass(frozen=True)
class Streams:
    seed: int

    def __post_init__(self):
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    def sequence(self, purpose: str, *indices: int) -> np.random.SeedSequence:
        key = (_purpose_code(purpose),) + tuple(int(i) for i in indices)
        return np.random.SeedSequence(entropy=self.seed, spawn_key=key)

    def generator(self, purpose: str, *indices: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.sequence(purpose, *indices)))

    def child_seed(self, index: int) -> int:
        state = self.sequence("job", index).generate_state(1, dtype=np.uint64)
        return int(state[0])

    def child(self, index: int) -> "Streams":
        return Streams(self.child_seed(index))
