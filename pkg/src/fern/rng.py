"""Seeded random streams.

All randomness comes from numpy's counter-based Philox bit generator keyed
by ``SeedSequence(seed).spawn(...)``.  Stream order is fixed so that the
same seed gives the same draws across runs:

    0 init     parameter initialisation
    1 shuffle  per-epoch minibatch permutations
    2 noise    training z / y0 noise
    3 eval     evaluation noise (only used when eval noise is sampled)
    4 sim      simulator innovations and regime draws
"""

from __future__ import annotations

import numpy as np

STREAMS = ("init", "shuffle", "noise", "eval", "sim")


def generator(seed: int, stream: str = "sim") -> np.random.Generator:
    idx = STREAMS.index(stream)
    child = np.random.SeedSequence(int(seed)).spawn(len(STREAMS))[idx]
    return np.random.Generator(np.random.Philox(child))


def streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(int(seed)).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.Philox(c)) for name, c in zip(STREAMS, children)}
