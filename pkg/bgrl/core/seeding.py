"""
Seed derivation for reproducible, order-independent randomness

Child seeds are a function of (seed, role tag, index) only, so adding
parallelism or reordering work never changes the random streams.
"""
import zlib

import numpy as np


def derive_seed(seed: int, tag: str, index: int = 0) -> int:
    """Derive a 63-bit child seed from (seed, CRC32(tag), index)"""
    sequence = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(tag.encode("utf-8")), int(index)])
    return int(sequence.generate_state(1, dtype=np.uint64)[0]) >> 1


def make_rng(seed: int, tag: str = "root", index: int = 0) -> np.random.Generator:
    """Counter-based Philox generator for a derived seed"""
    return np.random.Generator(np.random.Philox(derive_seed(seed, tag, index)))
