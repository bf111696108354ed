"""Executable cross-checks tying the walk, Z, the kernel and the Bessel martingale together.

With phi = phi_lambda and S_n = Z_0 + ... + Z_n (S_{-1} = 0):

    W_n  = phi(Z_n) exp(-lambda S_{n-1})
    mu(n) = E[W_n - W_{n+1} | F_n] = exp(-lambda S_{n-1}) m(Z_n),
    m(z) = phi(z) - exp(-lambda z) (P phi)(z)
    Y_n  = W_n + sum_{k<n} mu(k)          (a martingale)

so optional stopping at sigma gives
    phi(0) E[1 - exp(-lambda S_{sigma-1})] = E[sum_{k<sigma} mu(k)].
m is tabulated exactly from the kernel rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numba as nb
import numpy as np

from .bessel import PhiLambda
from .branching import _step, block_sizes, DEFAULT_BLOCK
from .env import CookieConfig
from .errors import DomainError, TruncationTooSevere
from .kernel import TruncatedKernel, build_kernel
from .rng import map_replicas, replica_rng
from .stats import ks_two_sample, ks_critical_value
from .walk import hitting_batch


# ---------------------------------------------------------------------------
# mu table


@dataclass
class MuTable:
    """m(z) for z = 0..N with per-entry error bounds.

    Beyond N, |m(z)| <= phi(N) + exp(-lambda N) phi(0) (phi decreasing);
    that value is ``far_bound``.
    """

    lam: float
    nu: float
    phi_tab: np.ndarray = field(repr=False)
    m_tab: np.ndarray = field(repr=False)
    m_err: np.ndarray = field(repr=False)
    far_bound: float = 0.0

    @property
    def phi0(self) -> float:
        return float(self.phi_tab[0])


def mu_table(kernel: TruncatedKernel, lam: float) -> MuTable:
    """Exact m(z) against every kernel row.

    The unretained part of row z lies above N where 0 < phi <= phi(N+1), so
    (P phi)(z) is known up to tail_z * phi(N+1).
    """
    nu = kernel.config.nu
    ph = PhiLambda(lam, nu)
    N = kernel.N
    y = np.arange(N + 2, dtype=float)
    phi_all = np.asarray(ph(y))
    phi_tab = phi_all[: N + 1]
    Pphi = kernel.P @ phi_tab
    disc = np.exp(-lam * y[: N + 1])
    m = phi_tab - disc * Pphi
    err = disc * kernel.tail * phi_all[N + 1]
    # mid-point of the uncertainty interval
    m -= 0.5 * err
    far = float(phi_all[N] + math.exp(-lam * N) * phi_tab[0])
    return MuTable(lam, nu, phi_tab, m, 0.5 * err, far)


def mu_of_n(state_now: int, progeny_so_far: float, lam: float, kernel: TruncatedKernel, *,
            table: MuTable = None, tol: float = None):
    """mu(n) given Z_n = state_now and S_{n-1} = progeny_so_far; returns (value, error)."""
    if lam <= 0:
        raise DomainError("lambda must be > 0")
    if not 0 <= state_now <= kernel.N:
        raise DomainError(f"state must lie in 0..{kernel.N}")
    table = table or mu_table(kernel, lam)
    f = math.exp(-lam * progeny_so_far)
    val, err = f * table.m_tab[state_now], f * table.m_err[state_now]
    if tol is not None and err > tol:
        raise TruncationTooSevere(f"mu error {err:.3g} exceeds {tol:.3g}", bound=err, tolerance=tol)
    return float(val), float(err)


@nb.njit(cache=True)
def _one_step_w_diff(rng, p, j, s_prev, lam, phi_tab, draws):
    """Samples of W_n - W_{n+1} given Z_n = j and S_{n-1} = s_prev."""
    ntab = phi_tab.shape[0]
    out = np.empty(draws)
    w_now = math.exp(-lam * s_prev) * phi_tab[j]
    f_next = math.exp(-lam * (s_prev + j))
    for k in range(draws):
        z = _step(rng, p, j)
        out[k] = w_now - f_next * (phi_tab[z] if z < ntab else 0.0)
    return out


def mu_monte_carlo(config: CookieConfig, table: MuTable, j: int, progeny_so_far: float,
                   draws: int, seed: int):
    """Monte Carlo mean and SE of W_n - W_{n+1} given Z_n = j."""
    rng = replica_rng(seed, "verify", 0)
    d = _one_step_w_diff(rng, config.p_array, int(j), float(progeny_so_far), table.lam, table.phi_tab, int(draws))
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(draws))


@dataclass
class MartingaleTrace:
    lam: float
    Z: np.ndarray
    W: np.ndarray
    mu: np.ndarray
    Y: np.ndarray

    def recompute_W(self, phi) -> np.ndarray:
        S_prev = np.concatenate([[0], np.cumsum(self.Z)[:-1]])
        return phi(self.Z) * np.exp(-self.lam * S_prev)

    @property
    def max_increment(self) -> float:
        return float(np.abs(np.diff(self.Y)).max()) if len(self.Y) > 1 else 0.0


def martingale_trace(config: CookieConfig, lam: float, start: int, n_max: int, seed: int,
                     kernel: TruncatedKernel = None) -> MartingaleTrace:
    """One path of Z stopped at sigma with W_n, mu(n) and Y_n alongside."""
    kernel = kernel or build_kernel(config)
    tab = mu_table(kernel, lam)
    rng = replica_rng(seed, "verify", 0)
    p = config.p_array
    Z = [int(start)]
    for _ in range(n_max):
        Z.append(int(_step(rng, p, Z[-1])))
        if Z[-1] == 0:
            break
    Z = np.array(Z)
    if Z.max() > kernel.N:
        raise TruncationTooSevere(f"path left the table (max {Z.max()} > N={kernel.N})")
    S_prev = np.concatenate([[0], np.cumsum(Z)[:-1]])
    disc = np.exp(-lam * S_prev)
    W = tab.phi_tab[Z] * disc
    mu = tab.m_tab[Z] * disc
    Y = W + np.concatenate([[0.0], np.cumsum(mu)[:-1]])
    return MartingaleTrace(lam, Z, W, mu, Y)


# ---------------------------------------------------------------------------
# optional stopping


@nb.njit(cache=True)
def _stopping_block(rng, p, count, lam, m_tab, step_cap):
    ntab = m_tab.shape[0]
    lhs = np.empty(count)
    rhs = np.empty(count)
    far = np.zeros(count, np.int64)
    trunc = np.zeros(count, np.bool_)
    for e in range(count):
        z = 0
        S = 0.0
        acc = 0.0
        n = 0
        while True:
            if z < ntab:
                acc += math.exp(-lam * S) * m_tab[z]
            else:
                far[e] += 1
            S += z
            z = _step(rng, p, z)
            n += 1
            if z == 0:
                break
            if n >= step_cap:
                trunc[e] = True
                break
        lhs[e] = -math.expm1(-lam * S)
        rhs[e] = acc
    return lhs, rhs, far, trunc


def _stopping_chunk(b, p, sizes, lam, m_tab, step_cap, seed):
    return _stopping_block(replica_rng(seed, "verify", b), p, sizes[b], lam, m_tab, step_cap)


@dataclass
class StoppingReport:
    lam: float
    lhs: float
    rhs: float
    lhs_se: float
    rhs_se: float
    paired_se: float
    count: int
    truncated: int = 0
    far_steps: int = 0
    far_bound: float = 0.0
    table_error: float = 0.0

    @property
    def pooled_se(self) -> float:
        return math.hypot(self.lhs_se, self.rhs_se)

    @property
    def diff(self) -> float:
        return self.lhs - self.rhs

    @property
    def z_pooled(self) -> float:
        return abs(self.diff) / self.pooled_se if self.pooled_se > 0 else 0.0

    def passed(self, k: float = 3.0) -> bool:
        return abs(self.diff) <= k * self.pooled_se + self.far_bound + self.table_error


def optional_stopping_check(config: CookieConfig, lam: float, excursion_count: int, seed: int,
                            kernel: TruncatedKernel = None, *, step_cap: int = 10**7,
                            block: int = DEFAULT_BLOCK, workers=None) -> StoppingReport:
    """Both sides of E[1 - e^{-lambda S}] = E[sum_{k<sigma} mu(k)] / phi(0) on the same excursions.

    ``lhs_se`` and ``rhs_se`` are the separate standard errors (pooled SE is
    their root sum of squares); ``paired_se`` uses the per-excursion difference.
    """
    if lam == 0:
        return StoppingReport(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, excursion_count)
    if not 0 < lam <= 1:
        raise DomainError("lambda must lie in (0, 1]")
    if config.alpha <= 0 or config.alpha > 1:
        raise DomainError("the Bessel martingale is set up for 0 < alpha <= 1")
    kernel = kernel or build_kernel(config)
    tab = mu_table(kernel, lam)
    sizes = block_sizes(excursion_count, block)
    fn = partial(_stopping_chunk, p=config.p_array, sizes=sizes, lam=float(lam), m_tab=tab.m_tab,
                 step_cap=int(step_cap), seed=seed)
    parts = map_replicas(fn, range(len(sizes)), workers)
    lhs = np.concatenate([q[0] for q in parts])
    rhs = np.concatenate([q[1] for q in parts]) / tab.phi0
    far = int(sum(q[2].sum() for q in parts))
    trunc = np.concatenate([q[3] for q in parts])
    keep = ~trunc
    lhs, rhs = lhs[keep], rhs[keep]
    n = len(lhs)
    se = lambda v: float(v.std(ddof=1) / math.sqrt(n))
    return StoppingReport(
        lam, float(lhs.mean()), float(rhs.mean()), se(lhs), se(rhs), se(lhs - rhs), n,
        int(trunc.sum()), far, far * tab.far_bound / tab.phi0 / n,
        float(tab.m_err.max() / tab.phi0),
    )


# ---------------------------------------------------------------------------
# martingale flatness


@nb.njit(cache=True)
def _flat_block(rng, p, count, start, n_max, lam, phi_tab, m_tab):
    ntab = m_tab.shape[0]
    sums = np.zeros(n_max + 1)
    sumsq = np.zeros(n_max + 1)
    max_inc = 0.0
    far = 0
    for r in range(count):
        z = start
        S = 0.0
        acc = 0.0
        Y = phi_tab[z] if z < ntab else 0.0
        alive = True
        sums[0] += Y
        sumsq[0] += Y * Y
        for n in range(1, n_max + 1):
            if alive:
                if z < ntab:
                    acc += math.exp(-lam * S) * m_tab[z]
                else:
                    far += 1
                S += z
                z = _step(rng, p, z)
                W = math.exp(-lam * S) * (phi_tab[z] if z < ntab else 0.0)
                Ynew = W + acc
                inc = abs(Ynew - Y)
                if inc > max_inc:
                    max_inc = inc
                Y = Ynew
                if z == 0:
                    alive = False
            sums[n] += Y
            sumsq[n] += Y * Y
    return sums, sumsq, max_inc, far


def _flat_chunk(b, p, sizes, start, n_max, lam, phi_tab, m_tab, seed):
    return _flat_block(replica_rng(seed, "verify", 10**6 + b), p, sizes[b], start, n_max, lam, phi_tab, m_tab)


@dataclass
class FlatnessReport:
    lam: float
    start: int
    Y0: float
    mean: np.ndarray = field(repr=False)
    se: np.ndarray = field(repr=False)
    max_increment: float = 0.0
    increment_cap: float = 0.0
    replicas: int = 0
    far_steps: int = 0

    @property
    def deviation_se(self) -> np.ndarray:
        d = np.abs(self.mean - self.Y0)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(self.se > 0, d / self.se, 0.0)
        return z

    @property
    def max_deviation(self) -> float:
        return float(np.abs(self.mean - self.Y0).max())

    @property
    def max_deviation_se(self) -> float:
        return float(self.deviation_se.max())


def martingale_flatness(config: CookieConfig, lam: float, start: int, n_max: int, replicas: int,
                        seed: int, kernel: TruncatedKernel = None, *, block: int = DEFAULT_BLOCK,
                        workers=None) -> FlatnessReport:
    """mean of Y_{n and sigma} for n = 0..n_max against Y_0 = phi(start)."""
    if lam <= 0:
        raise DomainError("lambda must be > 0")
    kernel = kernel or build_kernel(config)
    tab = mu_table(kernel, lam)
    sizes = block_sizes(replicas, block)
    fn = partial(_flat_chunk, p=config.p_array, sizes=sizes, start=int(start), n_max=int(n_max),
                 lam=float(lam), phi_tab=tab.phi_tab, m_tab=tab.m_tab, seed=seed)
    parts = map_replicas(fn, range(len(sizes)), workers)
    s = sum(q[0] for q in parts)
    ss = sum(q[1] for q in parts)
    mean = s / replicas
    var = np.maximum(ss / replicas - mean**2, 0.0) * replicas / max(replicas - 1, 1)
    return FlatnessReport(
        lam, int(start), float(tab.phi_tab[start]), mean, np.sqrt(var / replicas),
        max(q[2] for q in parts), 4 * tab.phi0, replicas, int(sum(q[3] for q in parts)),
    )


# ---------------------------------------------------------------------------
# hitting-time coupling


@nb.njit(cache=True)
def _z_sums(rng, p, n, count):
    """S = Z_0 + ... + Z_n for Z started at 0."""
    out = np.empty(count, np.int64)
    for r in range(count):
        z = 0
        s = 0
        for _ in range(n):
            z = _step(rng, p, z)
            s += z
        out[r] = s
    return out


def _zsum_chunk(b, p, n, sizes, seed):
    # sizes is keyed by stream id
    return _z_sums(replica_rng(seed, "coupling_branching", b), p, n, sizes[b])


def branching_sums(config: CookieConfig, n: int, count: int, seed: int, *, stream_offset: int = 0,
                   workers=None) -> np.ndarray:
    sizes = block_sizes(count, DEFAULT_BLOCK)
    ids = [stream_offset + b for b in range(len(sizes))]
    sizes_by_id = {i: s for i, s in zip(ids, sizes)}
    fn = partial(_zsum_chunk, p=config.p_array, n=int(n), sizes=sizes_by_id, seed=seed)
    return np.concatenate(map_replicas(fn, ids, workers))


@dataclass
class CouplingReport:
    """Hitting-time decomposition T_n = n + 2 sum_{k<=n} Z_k + K_n at several levels.

    ``gap`` holds K_n measured on the walk path (left steps from negative
    sites, doubled).  ``law_ks`` compares the walk-side sum of down-crossings
    with independent branching samples of sum_{k<=n} Z_k.  ``paired_ks``
    records the gap formed from independent walk and branching replicas
    (difference of two independent heavy-tailed samples; reported only).
    """

    levels: list
    replicas: int
    gap: dict = field(repr=False)
    T: dict = field(repr=False)
    capped: dict
    ks_consecutive: list
    ks_threshold: float
    ks_critical: float
    mean_gap: dict
    se_gap: dict
    law_ks: dict
    law_pvalue: dict
    paired_ks: list = field(default_factory=list)
    seeds: dict = field(default_factory=dict)

    def mean_drift(self, i: int = 0):
        a, b = self.levels[i], self.levels[i + 1]
        d = self.mean_gap[b] - self.mean_gap[a]
        return d, math.hypot(self.se_gap[a], self.se_gap[b])

    def passed(self) -> bool:
        ok = all(k <= self.ks_threshold for k in self.ks_consecutive)
        for i in range(len(self.levels) - 1):
            d, se = self.mean_drift(i)
            ok &= abs(d) <= 3 * se
        return ok


def coupling_check(config: CookieConfig, levels=(500, 1000), replicas: int = 100_000, seed: int = 0, *,
                   ks_threshold: float = 0.02, step_cap: int = 2**28, workers=None) -> CouplingReport:
    """Check T_n = n + 2 sum Z_k + K_n and the convergence of K_n in law.

    Each level uses its own independent walk replicas (so the two-sample KS
    between levels is legitimate) and its own branching replicas.
    """
    if config.alpha <= 0:
        raise DomainError("coupling check needs a transient walk (alpha > 0)")
    levels = sorted(int(n) for n in levels)
    gap, T, capped, mean, se, law_ks, law_p = {}, {}, {}, {}, {}, {}, {}
    branch = {}
    for i, n in enumerate(levels):
        hb = hitting_batch(config, n, replicas, seed + i, module="coupling_walk",
                           step_cap=step_cap, workers=workers)
        ok = ~hb["capped"]
        capped[n] = int((~ok).sum())
        # pathwise: T_n - n - 2 * (down-crossings at sites 0..n) = 2 * left steps below 0
        g = hb["T"][ok] - n - 2 * hb["left_nonnegative"][ok]
        assert np.array_equal(g, 2 * hb["left_negative"][ok])
        gap[n], T[n] = g, hb["T"][ok]
        mean[n] = float(g.mean())
        se[n] = float(g.std(ddof=1) / math.sqrt(len(g)))
        zs = branching_sums(config, n, replicas, seed + i, workers=workers)
        branch[n] = zs
        k = ks_two_sample(hb["left_nonnegative"][ok], zs)
        law_ks[n], law_p[n] = k.statistic, k.pvalue
    ks_c, paired = [], []
    for a, b in zip(levels, levels[1:]):
        ks_c.append(ks_two_sample(gap[a], gap[b]).statistic)
        ga = T[a] - a - 2 * branch[a][: len(T[a])]
        gb = T[b] - b - 2 * branch[b][: len(T[b])]
        paired.append(ks_two_sample(ga, gb).statistic)
    m = min(len(g) for g in gap.values())
    return CouplingReport(levels, replicas, gap, T, capped, ks_c, ks_threshold,
                          ks_critical_value(m, m, 0.05), mean, se, law_ks, law_p, paired,
                          {"walk": [seed + i for i in range(len(levels))], "stream": "coupling_walk/coupling_branching"})


# ---------------------------------------------------------------------------
# moment divergence


@dataclass
class DivergenceVerdict:
    beta: float
    sizes: np.ndarray
    estimates: np.ndarray
    slope: float
    threshold: float

    @property
    def verdict(self) -> str:
        return "growing" if self.slope > self.threshold else "stabilizing"


def moment_growth(values, beta: float, *, sizes=None, threshold: float = 0.1,
                  transform=None) -> DivergenceVerdict:
    """Median over blocks of the block mean of values^beta, at growing block sizes.

    For a finite moment the estimate settles and the log-log slope goes to
    0; for an infinite one it grows like size^{beta/rho - 1} (rho the tail
    index).  ``transform`` replaces ``v ** beta`` when given.
    """
    v = np.asarray(values, dtype=float)
    if beta < 0:
        raise DomainError("beta must be >= 0")
    x = transform(v) if transform is not None else (np.ones_like(v) if beta == 0 else v**beta)
    n = len(x)
    if sizes is None:
        hi = max(n // 20, 10)
        sizes = np.unique(np.geomspace(10, hi, 12).astype(int))
    est = []
    for s in sizes:
        nb_ = n // s
        est.append(float(np.median(x[: nb_ * s].reshape(nb_, s).mean(axis=1))))
    est = np.array(est)
    if np.all(est == est[0]):
        slope = 0.0
    else:
        slope = float(np.polyfit(np.log(sizes), np.log(est), 1)[0])
    return DivergenceVerdict(beta, np.asarray(sizes), est, slope, threshold)


def progeny_moment_divergence(beta: float, excursion_stream, *, threshold: float = 0.1,
                              sizes=None) -> DivergenceVerdict:
    """Stabilizing/growing verdict for E[(sum_{k<sigma} Z_k)^beta].

    ``excursion_stream`` is an ExcursionBatch or an array of progenies.
    """
    if beta <= 0 and beta != 0:
        raise DomainError("beta must be >= 0")
    prog = getattr(excursion_stream, "progeny", excursion_stream)
    trunc = getattr(excursion_stream, "truncated", None)
    prog = np.asarray(prog)
    if trunc is not None:
        prog = prog[~trunc]
    return moment_growth(prog, beta, sizes=sizes, threshold=threshold)


# ---------------------------------------------------------------------------
# small-lambda behaviour of E[sigma (1 - e^{-lambda S})]


@dataclass
class SigmaLaplaceReport:
    lambdas: np.ndarray
    values: np.ndarray
    se: np.ndarray
    exponent: float

    @property
    def decreasing(self) -> bool:
        return bool(np.all(np.diff(self.values[np.argsort(self.lambdas)]) > 0))


def sigma_laplace_bound(excursions, lambdas=(0.2, 0.1, 0.05, 0.025, 0.0125)) -> SigmaLaplaceReport:
    """E[sigma (1 - exp(-lambda S))] on a lambda grid and its fitted power.

    The quantity is o(lambda^eps) for some eps > 0: the fitted exponent of
    lambda must be positive.
    """
    lam = np.asarray(lambdas, dtype=float)
    keep = ~excursions.truncated
    s = excursions.sigma[keep].astype(float)
    g = excursions.progeny[keep].astype(float)
    vals, ses = [], []
    for l in lam:
        x = s * -np.expm1(-l * g)
        vals.append(x.mean())
        ses.append(x.std(ddof=1) / math.sqrt(len(x)))
    vals = np.array(vals)
    expo = float(np.polyfit(np.log(lam), np.log(vals), 1)[0])
    return SigmaLaplaceReport(lam, vals, np.array(ses), expo)


# ---------------------------------------------------------------------------
# large-deviation step bounds


def step_deviation_probabilities(kernel: TruncatedKernel, js):
    """Exact P(Z' <= j/2 | j) and P(Z' >= 2j | j) from kernel rows.

    The upper event counts the unretained mass (all of it lies above N >= 2j).
    """
    lo, hi = [], []
    for j in js:
        if 2 * j > kernel.N:
            raise DomainError(f"need N >= 2j, got j={j}")
        row = kernel.P[j]
        lo.append(float(row[: j // 2 + 1].sum()))
        hi.append(float(row[2 * j:].sum() + kernel.tail[j]))
    return np.array(lo), np.array(hi)
