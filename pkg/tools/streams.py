"""Counter-based random streams keyed by a master seed.

Every stream is a Philox generator whose key is the master seed and whose
counter words carry the stream identifiers, so the draws of one stream never
depend on how many other streams were consumed before it.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


SEED_MASK = (1 << 64) - 1
MAX_STREAM_IDS = 3


def normalize_seed(seed: int) -> int:
    """Return the seed as an unsigned 64-bit key."""
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    return int(seed) & SEED_MASK


def stream(seed: int, *ids: int) -> np.random.Generator:
    """Return the generator for stream ``ids`` under ``seed``.

    The lowest counter word is left at zero for Philox's own block counter;
    the remaining three words hold the identifiers.
    """
    if len(ids) > MAX_STREAM_IDS:
        raise ValueError(f"at most {MAX_STREAM_IDS} stream ids are supported")
    counter = [0, 0, 0, 0]
    for position, value in enumerate(ids, start=1):
        counter[position] = int(value) & SEED_MASK
    return np.random.Generator(np.random.Philox(key=normalize_seed(seed), counter=counter))


def derive_seed(seed: int, *labels: int) -> int:
    """Derive an independent 64-bit seed from ``seed`` and integer labels."""
    sequence = np.random.SeedSequence([normalize_seed(seed), *[int(label) & SEED_MASK for label in labels]])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def standard_normals(seed: int, ids: Sequence[int], shape: tuple[int, ...]) -> np.ndarray:
    """Draw one block of standard normals per stream id, stacked on axis 0."""
    blocks = [stream(seed, int(stream_id)).standard_normal(shape) for stream_id in ids]
    if not blocks:
        return np.zeros((0, *shape))
    return np.stack(blocks, axis=0)
