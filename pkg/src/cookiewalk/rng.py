"""Seed splitting and replica-parallel execution.

Every replica draws from its own PCG64 stream.  The stream for
``(master_seed, module, replica)`` comes from
``numpy.random.SeedSequence(entropy=master_seed, spawn_key=(module_id, replica))``:
SeedSequence hashes the entropy and the spawn key into a 128-bit pool, so
distinct ``(module, replica)`` pairs give statistically independent streams
and the same triple always gives the same stream.  Results therefore depend
only on the master seed and the replica count, never on scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

WORKERS_ENV = "COOKIEWALK_WORKERS"

MODULE_IDS = {
    "walk": 1,
    "branching": 2,
    "kernel": 3,
    "verify": 4,
    "stats": 5,
    "cli": 6,
    "escape": 7,
    "coupling_walk": 8,
    "coupling_branching": 9,
    "limit_law": 10,
}


def seed_sequence(master_seed: int, module: str, replica: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=(MODULE_IDS[module], int(replica))
    )


def replica_rng(master_seed: int, module: str, replica: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, module, replica)))


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def worker_count(workers=None) -> int:
    if workers is not None:
        return max(1, int(workers))
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def map_replicas(fn, replicas, workers=None, chunk=None):
    """``[fn(r) for r in replicas]``, optionally spread over processes.

    ``fn`` must be picklable (a module-level function or a partial of one).
    Output order always matches ``replicas``.
    """
    replicas = list(replicas)
    n = worker_count(workers)
    if n == 1 or len(replicas) < 2:
        return [fn(r) for r in replicas]
    chunk = chunk or max(1, len(replicas) // (4 * n))
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, replicas, chunksize=chunk))
