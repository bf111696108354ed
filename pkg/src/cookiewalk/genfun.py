"""Generating functions of the branching process Z.

F(s) = 1/(2-s) is the pgf of the Geometric(1/2) offspring law,
delta(s) = (2-s)^{M-1} E[s^{A_{M-1}}], H_k(s) = (2-s)^{M-1-k} E[s^{A_{M-1}}] - E[s^{A_k}],
gamma_0 = 1, gamma_{n+1} = delta(F_n) gamma_n with F_n = F o ... o F(0).

The survival series J_x(s) = sum_n P_x{Z~_n != 0} s^n splits as
J_x = Jhat_x + sum_{k=1}^{M-2} Jtilde_{k,x}; for M <= 2 the second family
is empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import CookieConfig
from .errors import DomainError, TruncationTooSevere
from .kernel import TruncatedKernel, a_prefix_law, survival_probabilities, visit_generating

FD_STEP = 1e-6


def F(s):
    """Geometric(1/2) pgf, defined for s < 2."""
    return 1.0 / (2.0 - np.asarray(s, dtype=float))


def F_closed(n, s=0.0):
    """n-fold iterate of F: (n - (n-1)s) / (n+1 - n s); F_n(0) = 1 - 1/(n+1)."""
    n = np.asarray(n, dtype=float)
    return (n - (n - 1) * s) / (n + 1 - n * s)


def F_iter(n: int, s: float = 0.0, *, check: bool = True) -> float:
    """F_n(s) by iterating F, cross-checked against the closed form."""
    if n < 0:
        raise DomainError("n must be non-negative")
    v = float(s)
    for _ in range(n):
        v = 1.0 / (2.0 - v)
    if check:
        c = float(F_closed(n, s))
        if abs(v - c) > 1e-12:
            raise AssertionError(f"F_{n}({s}): iteration {v!r} vs closed form {c!r}")
    return v


def F_iter_seq(n_max: int, s: float = 0.0) -> np.ndarray:
    """F_0(s)..F_{n_max}(s) by iteration."""
    out = np.empty(n_max + 1)
    v = float(s)
    for n in range(n_max + 1):
        out[n] = v
        v = 1.0 / (2.0 - v)
    return out


@dataclass
class GammaSeq:
    log_gamma: np.ndarray

    @property
    def values(self) -> np.ndarray:
        """gamma_n; entries above 1e300 are reported as inf (use log_gamma)."""
        with np.errstate(over="ignore"):
            v = np.exp(self.log_gamma)
        v[self.log_gamma > math.log(1e300)] = np.inf
        return v

    def __len__(self):
        return len(self.log_gamma)


class GenFnContext:
    """Pgf's of A_j and the gamma sequence for one configuration.

    ``L`` caps series lengths; the gamma cache grows on demand.
    """

    def __init__(self, config: CookieConfig, L: int = 200_000):
        self.config = config
        self.M = config.M
        self.L = L
        self._prefix = [a_prefix_law(config.p_array, j) for j in range(config.M)]
        self._log_gamma = np.zeros(1)

    # --- pgf's -----------------------------------------------------------

    def pgf_A(self, j: int, s):
        """E[s^{A_j}] for s in [0, 2), assembled in closed form.

        The first M tosses are summed exactly; a residual NB(r, 1/2) factor
        contributes (2-s)^{-r}.
        """
        if not 0 <= j < self.M:
            raise DomainError(f"j must lie in 0..{self.M - 1}")
        s = np.asarray(s, dtype=float)
        if np.any(s < 0) or np.any(s >= 2):
            raise DomainError("pgf_A is evaluated on [0, 2)")
        law = self._prefix[j]
        out = np.zeros_like(s)
        for v in range(len(law.absorbed) - 1, -1, -1):  # Horner in s
            out = out * s + law.absorbed[v]
        for base, r, w in law.residual:
            out = out + w * s**base * (2.0 - s) ** (-r)
        return out if out.ndim else float(out)

    def pgf_A_derivative(self, j: int, s: float = 1.0, h: float = FD_STEP) -> float:
        """Central difference; truncation error O(h^2), rounding O(1e-16/h)."""
        return (self.pgf_A(j, s + h) - self.pgf_A(j, s - h)) / (2 * h)

    def delta(self, s):
        s = np.asarray(s, dtype=float)
        out = (2.0 - s) ** (self.M - 1) * self.pgf_A(self.M - 1, s)
        return out if np.ndim(out) else float(out)

    def H(self, k: int, s):
        if not 1 <= k <= self.M - 2:
            raise DomainError(f"H_k is defined for 1 <= k <= M-2 = {self.M - 2}")
        s = np.asarray(s, dtype=float)
        out = (2.0 - s) ** (self.M - 1 - k) * self.pgf_A(self.M - 1, s) - self.pgf_A(k, s)
        return out if np.ndim(out) else float(out)

    # --- gamma -----------------------------------------------------------

    def gamma_seq(self, n_max: int) -> GammaSeq:
        """gamma_0..gamma_{n_max}, accumulated in log space."""
        if n_max < 0:
            raise DomainError("n_max must be non-negative")
        have = len(self._log_gamma) - 1
        if n_max > have:
            Fn = F_closed(np.arange(have, n_max))
            steps = np.log(self.delta(Fn))
            self._log_gamma = np.concatenate(
                [self._log_gamma, self._log_gamma[-1] + np.cumsum(steps)]
            )
        return GammaSeq(self._log_gamma[: n_max + 1].copy())

    # --- series ----------------------------------------------------------

    def _length_for(self, s: float, tol: float) -> int:
        """Smallest L whose geometric tail bound is below ``tol``.

        Terms are bounded by c gamma_n s^n with gamma_{n+1}/gamma_n = delta(F_n);
        past L the ratio s * max(delta(F_n), n >= L) < 1 bounds the remainder.
        """
        L = 16
        while L <= self.L:
            g = self.gamma_seq(4 * L)
            rho = s * max(1.0, float(self.delta(F_closed(np.arange(L, 4 * L))).max()))
            if rho < 1:
                bound = math.exp(g.log_gamma[L]) * s**L / (1 - rho)
                if bound <= tol:
                    return L
            L *= 2
        raise TruncationTooSevere(f"series at s={s} needs more than L={self.L} terms", tolerance=tol)

    def _series(self, coef, s: float, L: int):
        g = self.gamma_seq(4 * L)
        n = np.arange(L)
        terms = np.exp(g.log_gamma[:L] + n * math.log(s)) * coef(F_closed(n)) if s > 0 else (
            np.where(n == 0, coef(F_closed(n)), 0.0))
        rho = s * max(1.0, float(self.delta(F_closed(np.arange(L, 4 * L))).max()))
        tail = math.exp(g.log_gamma[L]) * s**L / (1 - rho) if s > 0 else 0.0
        return math.fsum(terms), tail

    def J_hat(self, x: int, s: float, tol: float = 1e-13):
        """Jhat_x(s) and an error bound."""
        L = self._length_for(s, tol)
        num, e_num = self._series(lambda u: 1.0 - u**x, s, L)
        den, e_den = self._series(lambda u: np.ones_like(u), s, L)
        val = num / ((1 - s) * den)
        err = (e_num + val * (1 - s) * e_den) / ((1 - s) * den)
        return val, err

    def J_tilde(self, k: int, x: int, s: float, kernel: TruncatedKernel, tol: float = 1e-13):
        """Jtilde_{k,x}(s) and an error bound (g_{k,x} from the kernel)."""
        L = self._length_for(s, tol)
        hmax = 2.0 ** (self.M - 1 - k) + 1.0  # |H_k| on [0, 1]
        num, e_num = self._series(lambda u: self.H(k, u), s, L)
        e_num *= hmax
        den, e_den = self._series(lambda u: np.ones_like(u), s, L)
        g, e_g = visit_generating(kernel, k, x, s, tol=max(tol, 1e-12))
        val = g * num / ((1 - s) * den)
        err = (abs(num) * e_g + g * e_num + abs(val) * (1 - s) * e_den) / ((1 - s) * den)
        return val, err


def pgf_A(ctx: GenFnContext, j: int, s):
    return ctx.pgf_A(j, s)


def delta(ctx: GenFnContext, s):
    return ctx.delta(s)


def H_k(ctx: GenFnContext, k: int, s):
    return ctx.H(k, s)


def gamma_seq(ctx: GenFnContext, n_max: int) -> GammaSeq:
    return ctx.gamma_seq(n_max)


@dataclass
class JDecomposition:
    x: int
    s: float
    direct: float
    direct_err: float
    hat: float
    tilde: list = field(default_factory=list)
    decomposed_err: float = 0.0

    @property
    def decomposed(self) -> float:
        return self.hat + math.fsum(self.tilde)

    @property
    def discrepancy(self) -> float:
        return abs(self.direct - self.decomposed)


def J_direct(kernel: TruncatedKernel, x: int, s: float, tol: float = 1e-10):
    """sum_n P_x{Z~_n != 0} s^n from the exact survival curve, with error."""
    if s == 0:
        return 1.0, 0.0
    n = 64
    while True:
        curve = survival_probabilities(kernel, x, n)
        w = s ** np.arange(n + 1)
        tail = curve.P[-1] * s ** (n + 1) / (1 - s)
        # mass lost past N may still be alive: it adds at most err_n at step n
        lost = float(curve.err @ w) + curve.err[-1] * s ** (n + 1) / (1 - s)
        if tail + lost <= tol or tail <= 1e-3 * lost:
            break
        n *= 2
    return float(curve.P @ w), tail + lost


def J_series(x: int, s: float, kernel: TruncatedKernel, ctx: GenFnContext = None, *,
             tol: float = 1e-8) -> JDecomposition:
    """Evaluate Jhat_x + sum_k Jtilde_{k,x} and the direct survival series.

    Raises TruncationTooSevere when either error bound exceeds ``tol``.
    """
    if x < 1:
        raise DomainError("x must be >= 1")
    if not 0 <= s < 1:
        raise DomainError("s must lie in [0, 1)")
    ctx = ctx or GenFnContext(kernel.config)
    direct, derr = J_direct(kernel, x, s, tol=tol / 10)
    hat, herr = ctx.J_hat(x, s)
    tilde, terr = [], 0.0
    for k in range(1, kernel.config.M - 1):
        v, e = ctx.J_tilde(k, x, s, kernel)
        tilde.append(v)
        terr += e
    out = JDecomposition(x, s, direct, derr, hat, tilde, herr + terr)
    worst = max(derr, out.decomposed_err)
    if worst > tol:
        raise TruncationTooSevere(f"series error bound {worst:.3g} exceeds {tol:.3g}", bound=worst, tolerance=tol)
    return out
