"""Tail-exponent fits, two-sample distances and samplers for the limit laws.

Stable convention: E[exp(-t S_nu)] = exp(-t^nu).  Mittag-Leffler: M_nu = S_nu^{-nu},
the standard-scale law with E[M^k] = k! / Gamma(1 + k nu).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .env import as_env
from .errors import DomainError, InsufficientTail
from .rng import replica_rng

MIN_SUPPORT = 20
TOP_TRIM = 1e-3


@dataclass
class TailFitReport:
    """Fitted tail exponent rho for P(X > x) ~ x^{-rho} (or pmf ~ x^{-rho-1})."""

    exponent: float
    ci: tuple
    window: tuple
    method: str = "LogLogRegression"
    r2: float = float("nan")
    stability: tuple = ()
    n_points: int = 0
    log_corrected: bool = False
    curvature: bool = False
    notes: list = field(default_factory=list)

    def __post_init__(self):
        lo, hi = self.ci
        self.ci = (min(lo, self.exponent), max(hi, self.exponent))

    @property
    def power_law(self) -> bool:
        return not self.curvature

    def as_dict(self) -> dict:
        return {
            "exponent": self.exponent, "ci": list(self.ci), "window": list(self.window),
            "method": self.method, "r2": self.r2, "stability": list(self.stability),
            "n_points": self.n_points, "log_corrected": self.log_corrected,
            "curvature": self.curvature, "notes": self.notes,
        }


def _regress(u, v):
    """Least squares v = a + b u; returns slope, its SE and R^2."""
    res = sps.linregress(u, v)
    return res.slope, res.stderr, res.rvalue**2


def _halves(u, v):
    mid = 0.5 * (u.min() + u.max())
    out = []
    for m in (u <= mid, u >= mid):
        out.append(_regress(u[m], v[m])[0] if m.sum() >= 3 else float("nan"))
    return out


def _curved(r2, halves, slope):
    spread = abs(halves[0] - halves[1])
    return bool(r2 < 0.98 or spread > 0.25 * max(1.0, abs(slope)))


def _sample_window(x, window):
    pos = x[x > 0]
    if len(pos) == 0:
        raise InsufficientTail("no positive samples")
    if window is None:
        lo = 10.0 * pos.min()
        hi = float(np.quantile(x, 1.0 - TOP_TRIM))
        return lo, hi
    return float(window[0]), float(window[1])


def _thresholds(xs_window, n_grid):
    """Log-spaced thresholds snapped down to observed support points."""
    sup = np.unique(xs_window)
    if len(sup) <= n_grid:
        return sup
    g = np.geomspace(sup[0], sup[-1], n_grid)
    return np.unique(sup[np.searchsorted(sup, g, side="right") - 1])


def fit_tail(samples=None, *, curve=None, window=None, method: str = "LogLogRegression",
             kind: str = "survival", log_correct: bool = False, bootstrap: int = 200,
             seed: int = 0, n_grid: int = 60) -> TailFitReport:
    """Least-squares slope of log survival against log threshold.

    Pass either ``samples`` (survival estimated empirically) or ``curve`` as
    ``(x, values)``, where ``kind`` says whether the values are survival
    probabilities or a pmf (a pmf slope -rho-1 is reported as rho).
    ``log_correct`` divides the values by log x first (for c log x / x laws).
    Default window for samples: from ten times the smallest positive value up
    to the 99.9% quantile.
    """
    if method not in ("LogLogRegression", "Hill"):
        raise DomainError(f"unknown method {method}")
    if (samples is None) == (curve is None):
        raise DomainError("give exactly one of samples or curve")
    if curve is not None:
        return _fit_curve(curve, window, kind, log_correct)

    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    lo, hi = _sample_window(x, window)
    inwin = x[(x >= lo) & (x <= hi)]
    if len(np.unique(inwin)) < MIN_SUPPORT:
        raise InsufficientTail(f"window [{lo:.3g}, {hi:.3g}] has {len(np.unique(inwin))} support points")
    if method == "Hill":
        return hill(x, lo, hi)

    t = _thresholds(inwin, n_grid)
    # counts strictly above each threshold
    above = n - np.searchsorted(x, t, side="right")
    keep = above > 0
    t, above = t[keep], above[keep]

    def slope_for(cnt):
        S = cnt / n
        ok = S > 0
        v = np.log(S[ok])
        if log_correct:
            v = v - np.log(np.log(t[ok]))
        return _regress(np.log(t[ok]), v)

    b, _, r2 = slope_for(above)
    u = np.log(t)
    v = np.log(above / n) - (np.log(np.log(t)) if log_correct else 0.0)
    halves = _halves(u, v)
    # multinomial bootstrap of the counts between consecutive thresholds
    rng = np.random.default_rng(seed)
    cells = np.concatenate([[n - above[0]], -np.diff(above), [above[-1]]]).astype(float)
    probs = cells / n
    boots = []
    for _ in range(bootstrap):
        c = rng.multinomial(n, probs)
        cnt = np.cumsum(c[::-1])[::-1][1:]
        boots.append(-slope_for(cnt)[0])
    ci = tuple(np.quantile(boots, [0.025, 0.975])) if bootstrap else (-b, -b)
    return TailFitReport(-b, ci, (lo, hi), "LogLogRegression", r2, tuple(-h for h in halves),
                         len(t), log_correct, _curved(r2, halves, b))


def _fit_curve(curve, window, kind, log_correct):
    if kind not in ("survival", "pmf"):
        raise DomainError("kind must be 'survival' or 'pmf'")
    xs, vals = (np.asarray(c, dtype=float) for c in curve)
    lo, hi = window if window is not None else (10.0 * xs[xs > 0].min(), xs.max())
    m = (xs >= lo) & (xs <= hi) & (vals > 0)
    if m.sum() < MIN_SUPPORT:
        raise InsufficientTail(f"window [{lo}, {hi}] has {m.sum()} support points")
    u = np.log(xs[m])
    v = np.log(vals[m])
    if log_correct:
        v = v - np.log(np.log(xs[m]))
    b, se, r2 = _regress(u, v)
    shift = 1.0 if kind == "pmf" else 0.0
    rho = -b - shift
    halves = [-h - shift for h in _halves(u, v)]
    # deterministic input: the interval covers regression error and window dependence
    lo_ci = min([rho - 1.96 * se] + halves)
    hi_ci = max([rho + 1.96 * se] + halves)
    return TailFitReport(rho, (lo_ci, hi_ci), (float(lo), float(hi)), "LogLogRegression", r2,
                         tuple(halves), int(m.sum()), log_correct, _curved(r2, [-h for h in halves], b),
                         [f"exact {kind} curve"])


def fit_tail_curve(x, values, window=None, *, kind: str = "survival", log_correct: bool = False) -> TailFitReport:
    return fit_tail(curve=(x, values), window=window, kind=kind, log_correct=log_correct)


def hill(samples, lo: float, hi: float = None) -> TailFitReport:
    """Hill estimator on the order statistics at or above ``lo`` (top 0.1% kept)."""
    x = np.sort(np.asarray(samples, dtype=float))[::-1]
    k = int((x > lo).sum())
    k = min(k, len(x) - 1)
    if k < MIN_SUPPORT:
        raise InsufficientTail(f"only {k} order statistics above {lo}")
    logs = np.log(x[:k]) - math.log(x[k])
    est = 1.0 / logs.mean()
    # asymptotic normal CI: est / sqrt(k)
    se = est / math.sqrt(k)
    return TailFitReport(est, (est - 1.96 * se, est + 1.96 * se), (lo, hi if hi is not None else x[0]),
                         "Hill", n_points=k)


# ---------------------------------------------------------------------------
# two-sample Kolmogorov-Smirnov


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float
    n: int
    m: int


def ks_two_sample(a, b) -> KSResult:
    """Exact sup-distance of the empirical CDFs with the asymptotic p-value."""
    a, b = np.asarray(a), np.asarray(b)
    if a.size == 0 or b.size == 0:
        raise DomainError("both samples must be non-empty")
    r = sps.ks_2samp(a, b, method="asymp")
    return KSResult(float(r.statistic), float(r.pvalue), a.size, b.size)


def ks_critical_value(n: int, m: int, level: float = 0.05) -> float:
    """Asymptotic two-sample KS threshold at significance ``level``."""
    return float(sps.kstwobign.isf(level) * math.sqrt((n + m) / (n * m)))


# ---------------------------------------------------------------------------
# samplers


def _check_nu(nu):
    if not 0 < nu < 1:
        raise DomainError("nu must lie in (0, 1)")
    if nu >= 0.999:
        raise DomainError("nu >= 0.999 is numerically degenerate for the stable sampler")


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else replica_rng(int(seed), "stats", 0)


def sample_stable(nu: float, count: int, seed) -> np.ndarray:
    """One-sided stable draws with E[exp(-t S)] = exp(-t^nu) (Kanter's representation)."""
    _check_nu(nu)
    rng = _rng(seed)
    U = rng.uniform(0.0, math.pi, count)
    E = rng.standard_exponential(count)
    a = np.sin(nu * U) / np.sin(U) ** (1.0 / nu)
    b = (np.sin((1.0 - nu) * U) / E) ** ((1.0 - nu) / nu)
    return a * b


def sample_mittag_leffler(nu: float, count: int, seed) -> np.ndarray:
    """M = S^{-nu}; E[M^k] = k! / Gamma(1 + k nu)."""
    return sample_stable(nu, count, seed) ** (-nu)


def mittag_leffler_moment(nu: float, k: int) -> float:
    return math.factorial(k) / math.gamma(1 + k * nu)


# ---------------------------------------------------------------------------
# limit-law comparison


@dataclass
class LimitLawReport:
    nu: float
    n_grid: np.ndarray
    ks: np.ndarray
    medians: np.ndarray
    replicas: int
    reference_size: int

    def as_dict(self) -> dict:
        return {"nu": self.nu, "n": self.n_grid.tolist(), "ks": self.ks.tolist(),
                "median_sup": self.medians.tolist(), "replicas": self.replicas,
                "reference_size": self.reference_size}


def limit_law_comparison(config, n_grid, replicas: int, seed: int, *, reference_size: int = 200_000,
                         workers=None) -> LimitLawReport:
    """KS distance between sup_{k<=n} X_k and the Mittag-Leffler law, both median-normalized."""
    from .walk import sup_batch

    env = as_env(config)
    cfg = env.base
    if not 0 < cfg.alpha < 1:
        raise DomainError("limit_law_comparison needs 0 < alpha < 1")
    nu = cfg.nu
    grid = np.asarray(sorted(int(n) for n in n_grid), np.int64)
    sup, _, _ = sup_batch(env, grid, replicas, seed, module="limit_law", workers=workers)
    ref = sample_mittag_leffler(nu, reference_size, replica_rng(seed, "limit_law", 10**9))
    ref = ref / np.median(ref)
    ks, med = [], []
    for j in range(len(grid)):
        s = sup[:, j].astype(float)
        m = np.median(s)
        med.append(m)
        ks.append(ks_two_sample(s / m, ref).statistic)
    return LimitLawReport(nu, grid, np.array(ks), np.array(med), replicas, reference_size)
