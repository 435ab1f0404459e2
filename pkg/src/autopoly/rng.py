"""Seeded random streams.

Every stochastic step draws from Philox, a counter-based generator whose
output sequence is fixed by its published algorithm, keyed through
``SeedSequence`` so that independent streams never overlap. Streams are
addressed by ``(seed, tag, *extra)``; the tags below keep the uses apart.
"""

import numpy as np

SPLIT = 1
INIT = 2
DROPOUT = 3
SBM_EDGES = 4
SBM_MEANS = 5
SBM_NOISE = 6
THETA = 7


def make_rng(seed, *stream):
    """Return a Philox-backed Generator for the stream ``(seed, *stream)``."""
    key = [int(seed)] + [int(s) for s in stream]
    if any(k < 0 for k in key):
        raise ValueError(f"seeds and stream ids must be non-negative, got {key}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
