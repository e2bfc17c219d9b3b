"""Parallel ensemble driver.

Paths are split into chunks of fixed composition (``chunk_size`` consecutive
indices).  Each chunk is simulated as one batched field state whose members
draw from their own streams, and chunks are merged in index order, so the
output does not depend on the number of workers.
"""

from __future__ import annotations

import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .field import ModeSet, init_state
from .rng import path_streams
from .spectrum import SpectrumParams
from .tracer import Mode, TracerConfig, Trajectory, ballistic_line, integrate


def simulate_chunk(params: SpectrumParams, modes: ModeSet, config: TracerConfig,
                   seed: int, indices) -> Trajectory:
    indices = list(indices)
    state = init_state(modes, path_streams(seed, indices), batch=len(indices))
    if config.mode is Mode.BALLISTIC:
        return ballistic_line(state, params, config)
    return integrate(state, params, config)


def _task(args):
    return simulate_chunk(*args)


def chunks(path_count: int, chunk_size: int) -> list[range]:
    if path_count < 1 or chunk_size < 1:
        raise ValueError("path_count and chunk_size must be positive")
    return [range(s, min(s + chunk_size, path_count)) for s in range(0, path_count, chunk_size)]


def run_ensemble(params: SpectrumParams, modes: ModeSet, config: TracerConfig, seed: int,
                 path_count: int, workers: int = 1, chunk_size: int = 50) -> Trajectory:
    """Simulate ``path_count`` independent paths; returns an ensemble trajectory."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    tasks = [(params, modes, config, seed, idx) for idx in chunks(path_count, chunk_size)]
    if workers == 1 or len(tasks) == 1:
        parts = [_task(t) for t in tasks]
    else:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            parts = list(pool.map(_task, tasks))
    first = parts[0]
    positions = np.concatenate([p.positions if p.batched else p.positions[None] for p in parts])
    meta = dict(first.metadata)
    meta.update({"seed": int(seed), "paths": int(path_count), "chunk_size": int(chunk_size)})
    return Trajectory(first.times, positions, first.drift, meta)
