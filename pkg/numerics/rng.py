"""
Seeded random streams for reproducible initialization and sampling.
"""
import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """
    Counter-based (Philox, 64-bit) generator for a seed and optional sub-stream keys.

    Distinct stream keys give statistically independent sequences for the same
    seed, so components can draw without disturbing one another.
    """
    sequence = np.random.SeedSequence([abs(int(seed)), int(seed < 0), *(int(s) for s in stream)])
    return np.random.Generator(np.random.Philox(sequence))
