"""Simulation of the multi-excited (cookie) random walk.

The inner loops are numba-compiled.  Visit counts live in a dense array
indexed by ``site + offset`` that grows on demand, so memory stays
proportional to the range of the walk; counts are capped at ``M + 1`` since
every visit beyond the M-th uses a fair coin.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import partial

import numba as nb
import numpy as np
from scipy.optimize import isotonic_regression
from scipy.stats import binomtest

from .env import EnvironmentVariant, Regime, as_env
from .errors import DomainError, ResourceError, StepCapExceeded
from .rng import map_replicas, replica_rng

#: full paths longer than this raise ResourceError (8 bytes per step)
MAX_PATH_STEPS = 200_000_000
#: default cap for transient walks; effectively unlimited
DEFAULT_STEP_CAP = 2**40


# ---------------------------------------------------------------------------
# compiled kernels


@nb.njit(cache=True)
def _grow(counts, off, x):
    n = counts.shape[0]
    if 0 <= x + off < n:
        return counts, off
    new_n = 2 * n
    new_off = off + (new_n - n) // 2
    while not (0 <= x + new_off < new_n):
        new_n *= 2
        new_off = off + (new_n - n) // 2
    new = np.zeros(new_n, counts.dtype)
    shift = new_off - off
    new[shift:shift + n] = counts
    return new, new_off


@nb.njit(cache=True, inline="always")
def _visit(counts, idx, M, p, x, positive_only):
    c = counts[idx]
    if c <= M:
        c += 1
        counts[idx] = c
    if positive_only and x < 0:
        return 0.5
    if c <= M:
        return p[c - 1]
    return 0.5


@nb.njit(cache=True)
def _walk_path(rng, p, positive_only, steps):
    M = p.shape[0]
    counts = np.zeros(1024, np.int32)
    off = 512
    pos = np.empty(steps + 1, np.int64)
    x = 0
    pos[0] = 0
    for k in range(steps):
        counts, off = _grow(counts, off, x)
        q = _visit(counts, x + off, M, p, x, positive_only)
        if rng.random() < q:
            x += 1
        else:
            x -= 1
        pos[k + 1] = x
    return pos, counts, off


@nb.njit(cache=True)
def _walk_checkpoints(rng, p, positive_only, checkpoints):
    """sup and position at each checkpoint time, plus returns to the origin."""
    M = p.shape[0]
    counts = np.zeros(1024, np.int32)
    off = 512
    ncp = checkpoints.shape[0]
    sup_at = np.empty(ncp, np.int64)
    pos_at = np.empty(ncp, np.int64)
    steps = checkpoints[ncp - 1]
    x = 0
    sup = 0
    returns = 0
    ci = 0
    while ci < ncp and checkpoints[ci] == 0:
        sup_at[ci] = 0
        pos_at[ci] = 0
        ci += 1
    for k in range(steps):
        counts, off = _grow(counts, off, x)
        q = _visit(counts, x + off, M, p, x, positive_only)
        if rng.random() < q:
            x += 1
        else:
            x -= 1
        if x > sup:
            sup = x
        if x == 0:
            returns += 1
        while ci < ncp and checkpoints[ci] == k + 1:
            sup_at[ci] = sup
            pos_at[ci] = x
            ci += 1
    return sup_at, pos_at, returns


@nb.njit(cache=True)
def _walk_hitting(rng, p, positive_only, levels, horizons, step_cap):
    """Hitting times of ``levels`` with windowed infima.

    For level index i (level n = levels[i], window h = horizons[i]):
      T[i]         first time X = n
      sup_at[i]    max X over times [0, n]
      inf_from[i]  min X over times [n, n + h]
      inf_after[i] min X over times [T[i], T[i] + h]
      left_neg[i]  left steps taken from sites < 0 before T[i]
      left_pos[i]  left steps taken from sites >= 0 before T[i]
    ``reached`` counts the levels hit before the cap.
    """
    M = p.shape[0]
    L = levels.shape[0]
    counts = np.zeros(1024, np.int32)
    off = 512
    T = np.full(L, -1, np.int64)
    sup_at = np.zeros(L, np.int64)
    inf_from = np.zeros(L, np.int64)
    inf_after = np.zeros(L, np.int64)
    left_neg = np.zeros(L, np.int64)
    left_pos = np.zeros(L, np.int64)
    want_windows = horizons[L - 1] >= 0

    x = 0
    t = 0
    sup = 0
    nneg = 0
    npos = 0
    reached = 0
    # time-window pointers: windows [levels[i], levels[i]+h[i]] are ordered
    tw_lo = 0
    tw_hi = 0
    # hit-window pointers
    hw_lo = 0
    for i in range(L):
        inf_from[i] = np.iinfo(np.int64).max
        inf_after[i] = np.iinfo(np.int64).max
    # level 0 is hit at time 0
    while reached < L and levels[reached] == 0:
        T[reached] = 0
        reached += 1

    while True:
        # record at time t (position x)
        while tw_hi < L and levels[tw_hi] == t:
            sup_at[tw_hi] = sup
            tw_hi += 1
        if want_windows:
            for i in range(tw_lo, tw_hi):
                if x < inf_from[i]:
                    inf_from[i] = x
            while tw_lo < tw_hi and levels[tw_lo] + horizons[tw_lo] <= t:
                tw_lo += 1
            for i in range(hw_lo, reached):
                if x < inf_after[i]:
                    inf_after[i] = x
            while hw_lo < reached and T[hw_lo] + horizons[hw_lo] <= t:
                hw_lo += 1
            done = reached == L and tw_lo == L and hw_lo == L
        else:
            done = reached == L and tw_hi == L
        if done or t >= step_cap:
            break
        counts, off = _grow(counts, off, x)
        q = _visit(counts, x + off, M, p, x, positive_only)
        if rng.random() < q:
            x += 1
        else:
            if x < 0:
                nneg += 1
            else:
                npos += 1
            x -= 1
        t += 1
        if x > sup:
            sup = x
            while reached < L and levels[reached] == x:
                T[reached] = t
                left_neg[reached] = nneg
                left_pos[reached] = npos
                reached += 1
    return T, sup_at, inf_from, inf_after, left_neg, left_pos, reached, t


@nb.njit(cache=True)
def _walk_downcrossings(rng, p, level, step_cap):
    """Left-step counts per site 0..level-1 before T_level, and T_level.

    Returns (D, K, T) where D[x] = number of steps x -> x-1 before T_level and
    K = number of left steps from negative sites; T = -1 if capped.
    """
    M = p.shape[0]
    counts = np.zeros(1024, np.int32)
    off = 512
    D = np.zeros(level + 1, np.int64)
    K = 0
    x = 0
    t = 0
    while x < level:
        if t >= step_cap:
            return D, K, -1
        counts, off = _grow(counts, off, x)
        q = _visit(counts, x + off, M, p, x, False)
        if rng.random() < q:
            x += 1
        else:
            if x < 0:
                K += 1
            else:
                D[x] += 1
            x -= 1
        t += 1
    return D, K, t


@nb.njit(cache=True)
def _walk_escape(rng, p, positive_only, escape_level, floor, step_cap):
    """Minimum position before first reaching ``escape_level`` or ``floor``.

    Stopping at ``floor`` loses nothing: every event {visit -K} with
    -K >= floor is already decided there.  Returns (min, capped).
    """
    M = p.shape[0]
    counts = np.zeros(1024, np.int32)
    off = 512
    x = 0
    lo = 0
    t = 0
    while x < escape_level and x > floor:
        if t >= step_cap:
            return lo, True
        counts, off = _grow(counts, off, x)
        q = _visit(counts, x + off, M, p, x, positive_only)
        if rng.random() < q:
            x += 1
        else:
            x -= 1
            if x < lo:
                lo = x
        t += 1
    return lo, False


# ---------------------------------------------------------------------------
# records


@dataclass
class WalkTrace:
    positions: np.ndarray
    sites: np.ndarray
    counts: np.ndarray
    seed: object
    env: EnvironmentVariant

    @property
    def visit_counts(self) -> dict:
        """site -> visits, capped at M + 1."""
        return dict(zip(self.sites.tolist(), self.counts.tolist()))

    @property
    def consumed_cookies(self) -> dict:
        """site -> cookies eaten there."""
        M = self.env.base.M
        return {s: min(c, M) for s, c in self.visit_counts.items()}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "position"])
            w.writerows(enumerate(self.positions.tolist()))


@dataclass
class WalkSummary:
    checkpoints: np.ndarray
    sup_at: np.ndarray
    pos_at: np.ndarray
    returns_to_origin: int
    seed: object


@dataclass
class HittingRecord:
    levels: np.ndarray
    T: np.ndarray
    sup_at: np.ndarray
    inf_from: np.ndarray
    inf_after_hit: np.ndarray
    horizon: np.ndarray
    left_steps_negative: np.ndarray
    left_steps_nonnegative: np.ndarray
    steps: int = 0
    seed: object = None


@dataclass
class EscapeTailEstimate:
    K: np.ndarray
    raw: np.ndarray
    corrected: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    replicas: int
    escape_level: int
    capped: int = 0
    notes: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# public API


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate_walk(env, steps: int, seed=None, *, max_path_steps: int = MAX_PATH_STEPS) -> WalkTrace:
    """Simulate ``steps`` steps and keep the whole path.

    Identical ``(env, steps, seed)`` give identical traces.
    """
    env = as_env(env)
    if steps < 1:
        raise DomainError("steps must be >= 1")
    if steps > max_path_steps:
        raise ResourceError(
            f"{steps} steps exceed the path budget of {max_path_steps}; "
            "use simulate_walk_summary instead"
        )
    pos, counts, off = _walk_path(_rng(seed), env.base.p_array, env.positive_only, int(steps))
    nz = np.nonzero(counts)[0]
    return WalkTrace(pos, nz - off, counts[nz].astype(np.int64), seed, env)


def checkpoint_grid(steps: int, ratio: float = 2.0) -> np.ndarray:
    """Times floor(ratio**j) up to ``steps``, with ``steps`` itself appended."""
    if ratio <= 1:
        raise DomainError("ratio must exceed 1")
    pts = set()
    v = 1.0
    while v <= steps:
        pts.add(int(v))
        v *= ratio
    pts.add(int(steps))
    return np.array(sorted(pts), dtype=np.int64)


def simulate_walk_summary(env, steps: int, seed=None, *, ratio: float = 2.0, checkpoints=None) -> WalkSummary:
    """Checkpointed sup / position without retaining the path."""
    env = as_env(env)
    if steps < 1:
        raise DomainError("steps must be >= 1")
    cps = checkpoint_grid(steps, ratio) if checkpoints is None else np.asarray(checkpoints, np.int64)
    sup_at, pos_at, returns = _walk_checkpoints(_rng(seed), env.base.p_array, env.positive_only, cps)
    return WalkSummary(cps, sup_at, pos_at, int(returns), seed)


def default_horizon(n, nu: float) -> np.ndarray:
    """10 n^(1/nu), the finite window standing in for an infinite-time infimum."""
    return np.ceil(10.0 * np.asarray(n, dtype=float) ** (1.0 / nu)).astype(np.int64)


def hitting_times(env, max_level: int, seed=None, horizon=None, *, levels=None,
                  ratio: float = 2.0, step_cap: int = None) -> HittingRecord:
    """Hitting times T_n of a grid of levels up to ``max_level``.

    ``horizon`` is ``None`` (10 n^(1/nu) per level), an int applied to every
    level, an array matching ``levels``, or ``-1`` to skip the infimum windows.
    Recurrent and critical-boundary walks (alpha <= 0) need ``step_cap``.
    """
    env = as_env(env)
    ex = env.base.exponents
    if max_level < 1:
        raise DomainError("max_level must be >= 1")
    if ex.regime is Regime.RECURRENT and step_cap is None:
        raise DomainError("alpha <= 0: the walk is recurrent, supply step_cap")
    lv = checkpoint_grid(max_level, ratio) if levels is None else np.asarray(levels, np.int64)
    if horizon is None:
        if ex.alpha <= 0:
            raise DomainError("default horizon needs alpha > 0")
        hz = default_horizon(lv, ex.nu)
    else:
        hz = np.broadcast_to(np.asarray(horizon, np.int64), lv.shape).copy()
    hz = np.maximum.accumulate(hz) if hz[-1] >= 0 else hz
    cap = DEFAULT_STEP_CAP if step_cap is None else int(step_cap)
    T, sup_at, inf_from, inf_after, lneg, lpos, reached, t = _walk_hitting(
        _rng(seed), env.base.p_array, env.positive_only, lv, hz, cap
    )
    if reached < len(lv):
        raise StepCapExceeded(
            f"step cap {cap} hit after reaching {reached} of {len(lv)} levels", steps=int(t)
        )
    return HittingRecord(lv, T, sup_at, inf_from, inf_after, hz, lneg, lpos, int(t), seed)


# ---------------------------------------------------------------------------
# replica batches


def _sup_one(r, p, positive_only, checkpoints, seed, module):
    rng = replica_rng(seed, module, r)
    return _walk_checkpoints(rng, p, positive_only, checkpoints)


def sup_batch(env, checkpoints, replicas: int, seed: int, *, module: str = "walk", workers=None):
    """Run ``replicas`` independent walks; sup and position at each checkpoint.

    Returns ``(sup, pos, returns)`` with shapes (replicas, n_cp), same, (replicas,).
    """
    env = as_env(env)
    cps = np.asarray(checkpoints, np.int64)
    fn = partial(_sup_one, p=env.base.p_array, positive_only=env.positive_only,
                 checkpoints=cps, seed=seed, module=module)
    out = map_replicas(fn, range(replicas), workers)
    sup = np.array([o[0] for o in out])
    pos = np.array([o[1] for o in out])
    ret = np.array([o[2] for o in out], dtype=np.int64)
    return sup, pos, ret


def _hit_one(r, p, level, seed, module, step_cap):
    rng = replica_rng(seed, module, r)
    lv = np.array([level], np.int64)
    hz = np.array([-1], np.int64)
    T, _, _, _, lneg, lpos, reached, _ = _walk_hitting(rng, p, False, lv, hz, step_cap)
    if reached < 1:
        return -1, -1, -1
    return T[0], lneg[0], lpos[0]


def hitting_batch(env, level: int, replicas: int, seed: int, *, module: str = "walk",
                  step_cap: int = 2**26, workers=None):
    """T_level and its left-step decomposition for independent replicas.

    Returns a dict of arrays ``T``, ``left_negative``, ``left_nonnegative`` and
    a boolean ``capped`` mask (capped replicas carry -1).
    """
    env = as_env(env)
    fn = partial(_hit_one, p=env.base.p_array, level=int(level), seed=seed,
                 module=module, step_cap=int(step_cap))
    out = np.array(map_replicas(fn, range(replicas), workers), dtype=np.int64)
    return {
        "T": out[:, 0],
        "left_negative": out[:, 1],
        "left_nonnegative": out[:, 2],
        "capped": out[:, 0] < 0,
    }


def downcrossings(env, level: int, seed=None, step_cap: int = DEFAULT_STEP_CAP):
    """Per-site left-step counts D[x], x = 0..level, before T_level.

    Reading ``D[level], D[level-1], ..., D[0]`` gives a path of the branching
    process Z started from 0; ``T = level + 2 * (D.sum() + K)``.
    """
    env = as_env(env)
    D, K, T = _walk_downcrossings(_rng(seed), env.base.p_array, int(level), int(step_cap))
    if T < 0:
        raise StepCapExceeded(f"level {level} not reached within {step_cap} steps")
    return D, int(K), int(T)


def _escape_one(r, p, positive_only, escape_level, floor, seed, step_cap):
    rng = replica_rng(seed, "escape", r)
    return _walk_escape(rng, p, positive_only, escape_level, floor, step_cap)


def estimate_escape_tail(env, K_values, replicas: int, seed: int, *, escape_level: int = None,
                         step_cap: int = 2**32, workers=None) -> EscapeTailEstimate:
    """Monte Carlo P(walk ever visits -K) for each K.

    Each replica runs until it first reaches ``escape_level`` (default
    ``20 * (max K + 1)``) or the floor ``-max K``.  A return to -K after the
    escape level is not seen, so the estimate is biased low by at most the
    probability of coming back from there.
    Estimates for all K share replicas, so the raw curve is already
    non-increasing; the isotonic pass only matters for merged inputs.
    """
    env = as_env(env)
    if env.base.alpha <= 0:
        raise DomainError("escape tail needs a transient base configuration (alpha > 0)")
    K = np.asarray(K_values, dtype=np.int64)
    if np.any(K < 0):
        raise DomainError("K must be non-negative")
    level = int(escape_level or 20 * (int(K.max()) + 1))
    floor = -int(K.max()) if K.max() > 0 else -1
    fn = partial(_escape_one, p=env.base.p_array, positive_only=env.positive_only,
                 escape_level=level, floor=floor, seed=seed, step_cap=int(step_cap))
    out = map_replicas(fn, range(replicas), workers)
    mins = np.array([o[0] for o in out], dtype=np.int64)
    capped = int(sum(o[1] for o in out))
    hits = np.array([(mins <= -k).sum() for k in K])
    raw = hits / replicas
    corrected = isotonic_regression(raw, increasing=False).x
    lo, hi = [], []
    for h in hits:
        ci = binomtest(int(h), replicas).proportion_ci(confidence_level=0.95, method="wilson")
        lo.append(ci.low)
        hi.append(ci.high)
    notes = [f"escape level {level}: returns to -K after reaching it are not observed"]
    if capped:
        notes.append(f"{capped} replicas hit the step cap before the escape level")
    return EscapeTailEstimate(K, raw, corrected, np.array(lo), np.array(hi), replicas, level, capped, notes)
