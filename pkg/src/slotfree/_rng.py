"""Seeding helpers.

Every stochastic routine in the package takes a ``numpy.random.Generator``.
Experiments derive independent child streams from an integer seed plus a
tuple of integer keys (run index, stream id, ...), so a run's output depends
only on its keys and never on the order in which runs are scheduled.
"""

import numpy as np

# stream ids used by the experiment harnesses
DATA_STREAM = 0
MODEL_STREAM = 1
TEST_STREAM = 2


def make_rng(seed, *keys):
    """Return a Generator seeded from ``seed`` and any integer ``keys``."""
    if isinstance(seed, np.random.Generator):
        if keys:
            raise TypeError("cannot derive keyed streams from a Generator")
        return seed
    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
