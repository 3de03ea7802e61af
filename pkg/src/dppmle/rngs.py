"""Deterministic random streams.

All randomness in the package flows through Philox, a counter-based
generator, keyed by a user seed plus an integer stream path.  Distinct
paths give statistically independent streams, so replicate- or
restart-level parallelism can never change results.
"""

from __future__ import annotations

import numpy as np

# Fixed tags keeping unrelated stream families apart.
SAMPLE_STREAM = 0
REPLICATE_STREAM = 1
RESTART_STREAM = 2


def stream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the stream identified by (seed, path).

    Same (seed, path) always yields a bit-identical stream; different
    paths are independent.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
