"""Deterministic random substreams.

Every stochastic component draws from ``substream(seed, *keys)``, a
generator seeded by ``SeedSequence(seed, spawn_key=keys)``. Keys are small
non-negative integers naming the purpose and position of the draw, e.g.
``(STREAM_FILTER, iteration, day)``, so any part of a run can be
reproduced in isolation.
"""

from __future__ import annotations

import numpy as np

STREAM_STATES = 1
STREAM_VEHICLES = 2
STREAM_INIT = 3
STREAM_FILTER = 4
STREAM_PREDICT = 5
STREAM_TRIPS = 6


def substream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))
