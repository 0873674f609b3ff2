"""Counter-based random streams.

All randomness comes from Philox generators keyed by ``(seed, stream)``.  A
stream's output depends only on that key, never on call order or on how many
worker threads are running, which is what makes simulations reproducible
across ``--threads`` settings.
"""

from __future__ import annotations

import numpy as np

# stream ids used across the package; fixed so files stay reproducible
STATE_SHOCKS = 0
MEASUREMENT = 1
MA_SHOCKS = 2
MA_MEASUREMENT = 3
MCMC = 4
LOADINGS = 5


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def child_seeds(master_seed: int, n: int) -> list[int]:
    """Derive ``n`` independent 63-bit seeds from a master seed."""
    children = np.random.SeedSequence(int(master_seed)).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for c in children]


def derive_seed(master_seed: int, *keys: int) -> int:
    """A 63-bit seed determined by ``master_seed`` and an integer key path."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
