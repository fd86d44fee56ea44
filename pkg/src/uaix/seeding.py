"""Seed splitting.

Every random stream in a run derives from one root seed through
``numpy.random.SeedSequence`` spawn keys, so any sub-computation (one image,
one relevance sample, one ensemble member) can be replayed on its own:

    derive_seed(root, "data", image_index)
    derive_seed(root, "relevance", image_index, sample_index)

String keys are hashed to stable 32-bit integers (CRC32) before use.
"""
import zlib

import numpy as np


def _key(k):
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    return int(k)


def derive_seed(root, *keys):
    """A 64-bit seed for the stream identified by ``keys`` under ``root``."""
    ss = np.random.SeedSequence(int(root), spawn_key=tuple(_key(k) for k in keys))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def rng_for(root, *keys):
    return np.random.default_rng(derive_seed(root, *keys))
