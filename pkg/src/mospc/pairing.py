"""In-batch pair construction.

Each sample may join at most two pairs. Samples are shuffled and joined in a
ring, ``(s0, s1), (s1, s2), ..., (s_{B-1}, s0)``, which puts every sample in
exactly two pairs whenever the batch has three or more samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_PAIRS_PER_SAMPLE = 2


@dataclass(frozen=True)
class PairBatch:
    pairs: tuple[tuple[int, int], ...]

    def __len__(self):
        return len(self.pairs)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.pairs:
            return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
        idx = np.array(self.pairs, dtype=np.intp)
        return idx[:, 0], idx[:, 1]


def make_pairs(batch_size: int, rng) -> PairBatch:
    """Pair up ``batch_size`` samples; ``rng`` is a seed or ``np.random.Generator``."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(rng)
    if batch_size == 1:
        return PairBatch(())
    s = rng.permutation(batch_size).tolist()
    if batch_size == 2:
        return PairBatch(((s[0], s[1]),))
    return PairBatch(tuple((s[k], s[(k + 1) % batch_size]) for k in range(batch_size)))
