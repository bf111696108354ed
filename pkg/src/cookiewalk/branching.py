"""The branching process with migration Z attached to a cookie environment.

A_j counts the failures before the (j+1)-th success in a coin sequence whose
first M coins have success probabilities p_1..p_M and whose later coins are
fair.  From state i <= M-1 the chain jumps to a fresh copy of A_i; from
i > M-1 it jumps to A_{M-1} plus i-M+1 independent Geometric(1/2) variables
(support {0,1,...}, mean 1).  Independent coin sequences are used for every
draw; the shared-sequence variant exists only for coupling checks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import partial

import numba as nb
import numpy as np

from .env import CookieConfig
from .errors import DomainError, StepCapExceeded
from .rng import as_generator, map_replicas, replica_rng

DEFAULT_STEP_CAP = 10**7
DEFAULT_BLOCK = 10_000


# ---------------------------------------------------------------------------
# compiled kernels


@nb.njit(cache=True)
def _sample_A(rng, p, j):
    M = p.shape[0]
    succ = 0
    fail = 0
    for i in range(M):
        if rng.random() < p[i]:
            succ += 1
            if succ == j + 1:
                return fail
        else:
            fail += 1
    # fair coins from here on: failures before the remaining successes
    return fail + rng.negative_binomial(j + 1 - succ, 0.5)


@nb.njit(cache=True)
def _sample_A_shared(rng, p):
    """(A_0, ..., A_{M-1}) read off a single coin sequence."""
    M = p.shape[0]
    out = np.empty(M, np.int64)
    succ = 0
    fail = 0
    i = 0
    while succ < M:
        q = p[i] if i < M else 0.5
        if rng.random() < q:
            out[succ] = fail
            succ += 1
        else:
            fail += 1
        i += 1
    return out


@nb.njit(cache=True)
def _step(rng, p, i):
    M = p.shape[0]
    if i <= M - 1:
        return _sample_A(rng, p, i)
    return _sample_A(rng, p, M - 1) + rng.negative_binomial(i - M + 1, 0.5)


@nb.njit(cache=True)
def _step_many(rng, p, i, size):
    out = np.empty(size, np.int64)
    for k in range(size):
        out[k] = _step(rng, p, i)
    return out


@nb.njit(cache=True)
def _A_many(rng, p, j, size):
    out = np.empty(size, np.int64)
    for k in range(size):
        out[k] = _sample_A(rng, p, j)
    return out


@nb.njit(cache=True)
def _A_shared_many(rng, p, size):
    out = np.empty((size, p.shape[0]), np.int64)
    for k in range(size):
        out[k] = _sample_A_shared(rng, p)
    return out


@nb.njit(cache=True)
def _coupled_step_many(rng, p, x, y, size):
    """Next states from x and y driven by the same coins and geometrics."""
    M = p.shape[0]
    zx = np.empty(size, np.int64)
    zy = np.empty(size, np.int64)
    hi = max(x, y)
    for k in range(size):
        A = _sample_A_shared(rng, p)
        zx[k] = A[min(x, M - 1)]
        zy[k] = A[min(y, M - 1)]
        extra = 0
        for g in range(1, hi - M + 2):
            extra += rng.geometric(0.5) - 1
            if g == x - M + 1:
                zx[k] += extra
            if g == y - M + 1:
                zy[k] += extra
    return zx, zy


@nb.njit(cache=True)
def _excursion(rng, p, start, step_cap):
    """(sigma, progeny, peak, truncated) for one excursion from ``start``."""
    z = start
    progeny = 0
    peak = start
    n = 0
    while True:
        progeny += z
        z = _step(rng, p, z)
        n += 1
        if z > peak:
            peak = z
        if z == 0:
            return n, progeny, peak, False
        if n >= step_cap:
            return n, progeny, peak, True


@nb.njit(cache=True)
def _excursion_batch(rng, p, count, start, step_cap):
    sig = np.empty(count, np.int64)
    prog = np.empty(count, np.int64)
    peak = np.empty(count, np.int64)
    trunc = np.empty(count, np.bool_)
    for k in range(count):
        s, g, m, t = _excursion(rng, p, start, step_cap)
        sig[k] = s
        prog[k] = g
        peak[k] = m
        trunc[k] = t
    return sig, prog, peak, trunc


@nb.njit(cache=True)
def _excursion_path(rng, p, start, step_cap):
    """Z_0..Z_sigma (ending at 0 unless truncated)."""
    buf = np.empty(64, np.int64)
    buf[0] = start
    n = 0
    z = start
    while True:
        z = _step(rng, p, z)
        n += 1
        if n >= buf.shape[0]:
            new = np.empty(2 * buf.shape[0], np.int64)
            new[:n] = buf[:n]
            buf = new
        buf[n] = z
        if z == 0 or n >= step_cap:
            return buf[:n + 1].copy()


@nb.njit(cache=True)
def _absorbed_path(rng, p, start, steps):
    out = np.zeros(steps + 1, np.int64)
    z = start
    out[0] = z
    for n in range(1, steps + 1):
        if z == 0:
            break
        z = _step(rng, p, z)
        out[n] = z
    return out


# ---------------------------------------------------------------------------
# sampler


class MigrationSampler:
    """Draws of A_j and of the transitions of Z for one configuration."""

    def __init__(self, config: CookieConfig, seed=None):
        self.config = config
        self.rng = as_generator(seed)
        self._p = config.p_array

    def sample_A(self, j: int, size=None):
        if not 0 <= j < self.config.M:
            raise DomainError(f"j must lie in 0..{self.config.M - 1}")
        if size is None:
            return int(_sample_A(self.rng, self._p, j))
        return _A_many(self.rng, self._p, j, int(size))

    def sample_A_shared(self, size=None):
        """Rows (A_0..A_{M-1}) from one coin sequence each; non-decreasing."""
        if size is None:
            return _sample_A_shared(self.rng, self._p)
        return _A_shared_many(self.rng, self._p, int(size))

    def step(self, current: int, size=None):
        if current < 0:
            raise DomainError("states are non-negative")
        if size is None:
            return int(_step(self.rng, self._p, int(current)))
        return _step_many(self.rng, self._p, int(current), int(size))

    def coupled_step(self, x: int, y: int, size: int = 1):
        """Monotone coupling: from x <= y the first output never exceeds the second."""
        if x < 0 or y < 0:
            raise DomainError("states are non-negative")
        return _coupled_step_many(self.rng, self._p, int(x), int(y), int(size))


def sample_A(j: int, sampler: MigrationSampler, size=None):
    return sampler.sample_A(j, size)


def step_Z(current: int, sampler: MigrationSampler, size=None):
    return sampler.step(current, size)


# ---------------------------------------------------------------------------
# excursions


@dataclass
class ExcursionRecord:
    sigma: int
    progeny: int
    peak: int
    start_state: int
    truncated: bool = False
    path: np.ndarray = None


@dataclass
class ExcursionBatch:
    """Columnar excursion results; concatenation merges batches."""

    sigma: np.ndarray
    progeny: np.ndarray
    peak: np.ndarray
    truncated: np.ndarray
    start_state: int = 0
    seed: object = None
    replica: np.ndarray = None
    paths: list = field(default=None, repr=False)

    def __len__(self):
        return len(self.sigma)

    @property
    def n_truncated(self) -> int:
        return int(self.truncated.sum())

    @property
    def complete(self) -> np.ndarray:
        return ~self.truncated

    def mean_sigma(self):
        """Mean and standard error of sigma over untruncated excursions."""
        s = self.sigma[self.complete].astype(float)
        return s.mean(), s.std(ddof=1) / np.sqrt(len(s))

    def records(self):
        for k in range(len(self)):
            yield ExcursionRecord(int(self.sigma[k]), int(self.progeny[k]), int(self.peak[k]),
                                  self.start_state, bool(self.truncated[k]),
                                  None if self.paths is None else self.paths[k])

    @classmethod
    def concat(cls, batches):
        batches = list(batches)
        paths = None
        if all(b.paths is not None for b in batches):
            paths = [q for b in batches for q in b.paths]
        rep = None
        if all(b.replica is not None for b in batches):
            rep = np.concatenate([b.replica for b in batches])
        return cls(
            np.concatenate([b.sigma for b in batches]),
            np.concatenate([b.progeny for b in batches]),
            np.concatenate([b.peak for b in batches]),
            np.concatenate([b.truncated for b in batches]),
            batches[0].start_state, batches[0].seed, rep, paths,
        )

    def to_csv(self, path):
        rep = self.replica if self.replica is not None else np.zeros(len(self), np.int64)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replica", "sigma", "progeny", "peak", "truncated_flag"])
            for row in zip(rep.tolist(), self.sigma.tolist(), self.progeny.tolist(),
                           self.peak.tolist(), self.truncated.astype(int).tolist()):
                w.writerow(row)


def simulate_excursion(start_state: int, sampler: MigrationSampler, step_cap: int = DEFAULT_STEP_CAP,
                       *, keep_path: bool = False, strict: bool = False) -> ExcursionRecord:
    """Run Z from ``start_state`` until it first hits 0 at a time n >= 1.

    A run reaching ``step_cap`` comes back flagged ``truncated``, or raises
    StepCapExceeded when ``strict``.
    """
    if step_cap < 1:
        raise DomainError("step_cap must be >= 1")
    if start_state < 0:
        raise DomainError("start_state must be non-negative")
    p = sampler.config.p_array
    if keep_path:
        path = _excursion_path(sampler.rng, p, int(start_state), int(step_cap))
        sigma = len(path) - 1
        truncated = path[-1] != 0
        rec = ExcursionRecord(sigma, int(path[:-1].sum()), int(path.max()), start_state, bool(truncated), path)
    else:
        s, g, m, t = _excursion(sampler.rng, p, int(start_state), int(step_cap))
        rec = ExcursionRecord(int(s), int(g), int(m), start_state, bool(t))
    if rec.truncated and strict:
        raise StepCapExceeded(f"excursion not finished after {step_cap} steps", steps=step_cap)
    return rec


def _excursion_block(b, p, sizes, start, step_cap, seed, keep_paths):
    rng = replica_rng(seed, "branching", b)
    if keep_paths:
        paths = [_excursion_path(rng, p, start, step_cap) for _ in range(sizes[b])]
        sig = np.array([len(q) - 1 for q in paths], np.int64)
        prog = np.array([q[:-1].sum() for q in paths], np.int64)
        peak = np.array([q.max() for q in paths], np.int64)
        trunc = np.array([q[-1] != 0 for q in paths], bool)
        return sig, prog, peak, trunc, paths
    return (*_excursion_batch(rng, p, sizes[b], start, step_cap), None)


def block_sizes(count: int, block: int = DEFAULT_BLOCK) -> list:
    full, rest = divmod(int(count), int(block))
    return [block] * full + ([rest] if rest else [])


def simulate_excursions(config: CookieConfig, count: int, seed: int, *, start_state: int = 0,
                        step_cap: int = DEFAULT_STEP_CAP, block: int = DEFAULT_BLOCK,
                        keep_paths: bool = False, workers=None) -> ExcursionBatch:
    """``count`` independent excursions from ``start_state``.

    Excursions are generated in blocks of ``block``; block b uses the stream
    for replica b, so output depends only on (seed, count, block).
    """
    if count < 1:
        raise DomainError("count must be >= 1")
    sizes = block_sizes(count, block)
    fn = partial(_excursion_block, p=config.p_array, sizes=sizes, start=int(start_state),
                 step_cap=int(step_cap), seed=seed, keep_paths=keep_paths)
    parts = map_replicas(fn, range(len(sizes)), workers)
    paths = [q for part in parts for q in part[4]] if keep_paths else None
    return ExcursionBatch(
        np.concatenate([q[0] for q in parts]),
        np.concatenate([q[1] for q in parts]),
        np.concatenate([q[2] for q in parts]),
        np.concatenate([q[3] for q in parts]),
        int(start_state), seed,
        np.repeat(np.arange(len(sizes)), sizes),
        paths,
    )


# ---------------------------------------------------------------------------
# absorbed process and occupation functionals


@dataclass
class AbsorbedTrajectory:
    path: np.ndarray

    @property
    def absorbed(self) -> bool:
        return bool(self.path[-1] == 0)

    def absorption_time(self):
        z = np.nonzero(self.path == 0)[0]
        return int(z[0]) if len(z) else None


def absorbed_trajectory(start_state: int, sampler: MigrationSampler, steps: int) -> AbsorbedTrajectory:
    """Z~_0..Z~_steps, frozen at 0 once it gets there."""
    if start_state < 0 or steps < 0:
        raise DomainError("start_state and steps must be non-negative")
    return AbsorbedTrajectory(_absorbed_path(sampler.rng, sampler.config.p_array, int(start_state), int(steps)))


@dataclass
class OccupationEstimate:
    mean: float
    se: float
    count: int
    per_excursion: np.ndarray = field(repr=False, default=None)


def excursion_sums(f, paths) -> np.ndarray:
    """sum_{i < sigma} f(Z_i) for every path (the final 0 is excluded)."""
    heads = [q[:-1] for q in paths]
    lengths = np.array([len(h) for h in heads])
    flat = np.concatenate(heads)
    vals = np.asarray(f(flat), dtype=float)
    if vals.shape == ():
        vals = np.full(flat.shape, float(vals))
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    return np.add.reduceat(vals, starts)


def occupation_functional(f, excursions) -> OccupationEstimate:
    """Monte Carlo estimate of E[sum_{i<sigma} f(Z_i)] with its standard error.

    ``excursions`` is an ExcursionBatch simulated with ``keep_paths=True`` or
    a sequence of paths.  ``f`` must accept an integer array.
    """
    if isinstance(excursions, ExcursionBatch):
        if excursions.paths is None:
            raise DomainError("occupation_functional needs excursions with paths")
        paths = [q for q, t in zip(excursions.paths, excursions.truncated) if not t]
    else:
        paths = list(excursions)
    sums = excursion_sums(f, paths)
    return OccupationEstimate(float(sums.mean()), float(sums.std(ddof=1) / np.sqrt(len(sums))),
                              len(sums), sums)
