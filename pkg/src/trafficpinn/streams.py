"""Deterministic RNG stream derivation.

Every stochastic draw in a run flows from a single root seed. A stream is
addressed by a small integer purpose tag plus optional extra indices, and two
streams with different addresses are statistically independent. Replaying a
run with the same seed therefore reproduces every draw bit for bit.
"""

from __future__ import annotations

import numpy as np

# purpose tags; values are part of the replay contract, do not renumber
INIT = 1          # network parameter initialization (extra: child idx)
COLLOC = 2        # Latin hypercube collocation pools (extra: stage index)
DATA_BATCH = 3    # per-step observation mini-batch draw
COLLOC_BATCH = 4  # per-step collocation mini-batch draw
INTERFACE = 5     # per-step interface samples (extra: interface idx, step)
WARMSTART = 6     # child warm-start matching points (extra: child idx)
RAR = 7           # RAR candidate draws (extra: round idx, subdomain idx)


def stream(seed: int, purpose: int, *extra: int) -> np.random.Generator:
    """Return the generator for (seed, purpose, *extra)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(purpose), *map(int, extra)]))
