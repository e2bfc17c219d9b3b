"""Reproducible random streams.

Every stream is a :class:`numpy.random.SeedSequence` child addressed by a
fixed key under the experiment seed, so the noise a trajectory sees depends
only on ``(seed, trajectory_index)`` and never on how work is scheduled.
"""

from __future__ import annotations

import numpy as np

MODES_KEY = 0
PATHS_KEY = 1
ORACLE_KEY = 2


def _generator(seed: int, *key: int) -> np.random.Generator:
    if isinstance(seed, bool) or int(seed) != seed or seed < 0:
        raise ValueError(f"seed must be a nonnegative integer, got {seed!r}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def mode_stream(seed: int) -> np.random.Generator:
    """Stream used to draw the experiment's frozen wavenumber sample."""
    return _generator(seed, MODES_KEY)


def path_stream(seed: int, index: int) -> np.random.Generator:
    """Private stream of trajectory ``index``."""
    return _generator(seed, PATHS_KEY, int(index))


def path_streams(seed: int, indices) -> list[np.random.Generator]:
    return [path_stream(seed, i) for i in indices]


def oracle_stream(seed: int, index: int = 0) -> np.random.Generator:
    """Stream for auxiliary Monte Carlo oracles."""
    return _generator(seed, ORACLE_KEY, int(index))
