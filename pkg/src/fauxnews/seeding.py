"""Deterministic random-stream management.

Every random draw in the project flows from a single run seed through named
substreams, so each component (forge, parameter init, exemplar sampling, batch
shuffling) stays independently replayable.
"""

import hashlib

import numpy as np


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    digest = hashlib.blake2s(str(label).encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def substream(seed: int, *labels) -> np.random.Generator:
    """Return the RNG for the substream named by ``labels`` under ``seed``."""
    key = tuple(_label_key(label) for label in labels)
    seq = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))


def stream_seed(seed: int, *labels) -> int:
    """Derive a plain integer seed for the named substream (for nested APIs)."""
    return int(substream(seed, *labels).integers(0, 2**63 - 1))
