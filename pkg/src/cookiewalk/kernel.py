"""Exact analytics for Z on the truncated state space {0..N}.

Every row keeps two pieces of bookkeeping beside its retained probabilities:
``tail`` = P(next state > N) and ``tail_mean`` = E[next state; next state > N].
Both follow exact recurrences (no ``1 - sum`` cancellation), and downstream
quantities turn them into worst-case error bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.signal import lfilter
from scipy.stats import nbinom

from .env import CookieConfig
from .errors import DomainError, NoConvergence, TruncationTooSevere

DEFAULT_N = 4096


@dataclass
class PmfVector:
    """Probabilities on {0..N} plus the mass ``tail_mass`` placed beyond N."""

    probs: np.ndarray
    tail_mass: float = 0.0
    tail_mean: float = 0.0
    note: str = ""

    @property
    def N(self) -> int:
        return len(self.probs) - 1

    def total(self) -> float:
        return math.fsum(self.probs) + self.tail_mass

    def mean(self) -> float:
        """Mean including the exact contribution of the tail when known."""
        return math.fsum(np.arange(len(self.probs)) * self.probs) + self.tail_mean

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.probs)

    def survival(self) -> np.ndarray:
        """P(X > y) for y = 0..N, summed from the right."""
        s = np.cumsum(self.probs[::-1])[::-1]
        return np.concatenate([s[1:], [0.0]]) + self.tail_mass


# ---------------------------------------------------------------------------
# law of A_j


@dataclass
class APrefixLaw:
    """Law of A_j split at toss M.

    ``absorbed[v]`` is the probability that the (j+1)-th success came within
    the first M tosses with v failures; ``residual`` lists ``(base, r, w)``:
    with probability w the first M tosses held M - base successes and A_j is
    ``base + NB(r, 1/2)``.
    """

    absorbed: np.ndarray
    residual: list


def a_prefix_law(p, j: int) -> APrefixLaw:
    p = np.asarray(p, dtype=float)
    M = len(p)
    if not 0 <= j < M:
        raise DomainError(f"j must lie in 0..{M - 1}")
    absorbed = np.zeros(M)
    prob = np.zeros(j + 1)  # successes so far, all < j+1
    prob[0] = 1.0
    for t in range(1, M + 1):
        q = p[t - 1]
        # reaching j+1 successes at toss t leaves t-j-1 failures
        if t >= j + 1:
            absorbed[t - j - 1] += prob[j] * q
        new = prob * (1 - q)
        new[1:] += prob[:-1] * q
        prob = new
    residual = [(M - s, j + 1 - s, prob[s]) for s in range(j + 1) if prob[s] > 0]
    return APrefixLaw(absorbed, residual)


def A_moments(p, j: int):
    """Exact E[A_j] and E[A_j^2]."""
    law = a_prefix_law(p, j)
    v = np.arange(len(law.absorbed))
    m1 = math.fsum(v * law.absorbed)
    m2 = math.fsum(v * v * law.absorbed)
    for base, r, w in law.residual:
        # NB(r, 1/2): mean r, variance 2r
        m1 += w * (base + r)
        m2 += w * (base * base + 2 * base * r + r * r + 2 * r)
    return m1, m2


def _nb_tail_mean(m, r):
    """E[X; X > m] for X ~ NB(r, 1/2), using k pmf_r(k) = r pmf_{r+1}(k-1)."""
    return r * nbinom.sf(m - 1, r + 1, 0.5)


def law_of_A(config: CookieConfig, j: int, N: int = DEFAULT_N) -> PmfVector:
    """Exact law of A_j on {0..N}; the remainder goes to ``tail_mass``."""
    law = a_prefix_law(config.p_array, j)
    probs = np.zeros(N + 1)
    k = min(len(law.absorbed), N + 1)
    probs[:k] = law.absorbed[:k]
    tail = math.fsum(law.absorbed[k:])
    tail_mean = math.fsum(np.arange(k, len(law.absorbed)) * law.absorbed[k:])
    y = np.arange(N + 1)
    for base, r, w in law.residual:
        if base <= N:
            probs[base:] += w * nbinom.pmf(y[: N + 1 - base], r, 0.5)
        m = N - base  # tail event: NB > m
        sf = nbinom.sf(m, r, 0.5) if m >= 0 else 1.0
        tail += w * sf
        tail_mean += w * (base * sf + (_nb_tail_mean(m, r) if m >= 0 else r))
    return PmfVector(probs, tail, tail_mean)


# ---------------------------------------------------------------------------
# truncated kernel


@dataclass
class TruncatedKernel:
    config: CookieConfig
    N: int
    P: np.ndarray = field(repr=False)
    tail: np.ndarray = field(repr=False)
    tail_mean: np.ndarray = field(repr=False)

    def row(self, i: int) -> PmfVector:
        return PmfVector(self.P[i].copy(), float(self.tail[i]), float(self.tail_mean[i]))

    def row_means(self) -> np.ndarray:
        """Retained means plus the exact tail contribution."""
        return self.P @ np.arange(self.N + 1, dtype=float) + self.tail_mean

    def row_mean_residuals(self) -> np.ndarray:
        """|mean(row k) - (k - alpha)| for k >= M-1 (index 0 is k = M-1)."""
        k = np.arange(self.config.M - 1, self.N + 1)
        return np.abs(self.row_means()[k] - (k - self.config.alpha))

    @cached_property
    def renormalized(self) -> np.ndarray:
        """Rows rescaled to sum to 1 (mass beyond N folded back onto {0..N})."""
        return self.P / self.P.sum(axis=1, keepdims=True)

    @cached_property
    def _transient_lu(self):
        # fundamental matrix of the chain killed at 0 or on leaving {0..N}
        Q = self.P[1:, 1:]
        return lu_factor(np.eye(self.N) - Q)

    @cached_property
    def lyapunov_constant(self) -> float:
        """B with E_y[sigma] <= y/alpha + B for every y (needs alpha > 0).

        V(z) = z/alpha has drift exactly -1 for z >= M-1.  Below that, each
        visit to k costs at most max(1 + (E A_k - k)/alpha, 0), and visits to
        k before sigma number at most 1/P(A_k = 0) in expectation.
        """
        a = self.config.alpha
        if a <= 0:
            raise DomainError("the bound needs alpha > 0")
        B = 0.0
        for k in range(self.config.M - 1):
            m1, _ = A_moments(self.config.p_array, k)
            p0 = float(np.prod(self.config.p_array[: k + 1]))
            B += max(1.0 + (m1 - k) / a, 0.0) / p0
        return B

    def solve_transient(self, b) -> np.ndarray:
        """(I - Q)^{-1} b on states 1..N."""
        return lu_solve(self._transient_lu, np.asarray(b, dtype=float))


def build_kernel(config: CookieConfig, N: int = DEFAULT_N) -> TruncatedKernel:
    """Rows 0..N of the transition matrix of Z, with exact tail bookkeeping.

    Row i+1 = row i convolved with Geometric(1/2) for i >= M-1, done as the
    two-term recurrence c[y] = r[y]/2 + c[y-1]/2, which is exact on {0..N}.
    """
    M = config.M
    if N < 2 * M:
        raise DomainError(f"N must be >= 2M = {2 * M}")
    P = np.empty((N + 1, N + 1))
    tail = np.empty(N + 1)
    tmean = np.empty(N + 1)
    for i in range(M):
        r = law_of_A(config, i, N)
        P[i], tail[i], tmean[i] = r.probs, r.tail_mass, r.tail_mean
    y = np.arange(N + 1)
    # P(xi > N - y) and E[xi; xi > N - y] for the geometric
    g_sf = np.ldexp(1.0, -(N - y + 1))
    g_tm = g_sf * (N - y + 2)
    for i in range(M, N + 1):
        prev = P[i - 1]
        P[i] = lfilter([0.5], [1.0, -0.5], prev)
        tail[i] = tail[i - 1] + prev @ g_sf
        tmean[i] = tmean[i - 1] + tail[i - 1] + prev @ (y * g_sf) + prev @ g_tm
    return TruncatedKernel(config, N, P, tail, tmean)


# ---------------------------------------------------------------------------
# absorption analysis


@dataclass
class SurvivalCurve:
    n: np.ndarray
    P: np.ndarray
    err: np.ndarray
    x: int = 1

    def rows(self):
        return list(zip(self.n.tolist(), self.P.tolist(), self.err.tolist()))


def _absorbed_iter(kernel: TruncatedKernel, x: int):
    """Yield (n, v_n, lost_n): v_n = law of Z~_n restricted to {1..N}.

    lost_n is the mass that has left {0..N} by time n; it may or may not
    have been absorbed later, so it is an adversarial error term.
    """
    if not 1 <= x <= kernel.N:
        raise DomainError(f"start must lie in 1..{kernel.N}")
    Q = kernel.P[1:, 1:]
    t = kernel.tail[1:]
    v = np.zeros(kernel.N)
    v[x - 1] = 1.0
    lost = 0.0
    n = 0
    while True:
        yield n, v, lost
        lost += v @ t
        v = v @ Q
        n += 1


def survival_probabilities(kernel: TruncatedKernel, x: int, n_max: int, *, tol: float = None) -> SurvivalCurve:
    """P_x{sigma > n} for n = 0..n_max with a certified truncation error.

    The true value lies in [P, P + err].
    """
    P = np.empty(n_max + 1)
    err = np.empty(n_max + 1)
    for n, v, lost in _absorbed_iter(kernel, x):
        P[n] = v.sum()
        err[n] = lost
        if n == n_max:
            break
    if tol is not None and err[-1] > tol:
        raise TruncationTooSevere(
            f"lost mass {err[-1]:.3g} exceeds tolerance {tol:.3g}; increase N",
            bound=err[-1], tolerance=tol,
        )
    return SurvivalCurve(np.arange(n_max + 1), P, err, x)


def expected_sigma(kernel: TruncatedKernel, x: int, *, tol: float = None):
    """E_x[sigma] and a certified upper error bound.

    The killed chain gives a lower bound h; the mass that leaves {0..N} from
    y contributes at most E[Z'/alpha + B; Z' > N | Z = y], summed against the
    Green function of the killed chain.
    """
    if not 0 <= x <= kernel.N:
        raise DomainError(f"x must lie in 0..{kernel.N}")
    a = kernel.config.alpha
    if a <= 0:
        raise DomainError("E[sigma] bound needs alpha > 0 (positive recurrence margin)")
    B = kernel.lyapunov_constant
    b = kernel.tail_mean / a + B * kernel.tail
    h = kernel.solve_transient(np.ones(kernel.N))
    e = kernel.solve_transient(b[1:])
    if x == 0:
        val = 1.0 + kernel.P[0, 1:] @ h
        err = b[0] + kernel.P[0, 1:] @ e
    else:
        val, err = h[x - 1], e[x - 1]
    if tol is not None and err > tol:
        raise TruncationTooSevere(f"E[sigma] error bound {err:.3g} exceeds {tol:.3g}", bound=err, tolerance=tol)
    return float(val), float(err)


def expected_sigma_all(kernel: TruncatedKernel) -> np.ndarray:
    """E_x[sigma] for x = 0..N on the killed chain (lower bounds)."""
    h = kernel.solve_transient(np.ones(kernel.N))
    return np.concatenate([[1.0 + kernel.P[0, 1:] @ h], h])


def stationary_law(kernel: TruncatedKernel, *, method: str = "solve", tol: float = 1e-12,
                   max_iter: int = 200_000) -> PmfVector:
    """Invariant law of the row-renormalized truncated chain.

    ``solve`` does a direct linear solve and then power-iterates until the
    total variation between iterates drops below ``tol``; ``power`` starts
    from the point mass at 0.  Raises NoConvergence after ``max_iter``.
    """
    P = kernel.renormalized
    n = kernel.N + 1
    if method == "solve":
        A = P.T - np.eye(n)
        A[-1] = 1.0
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        pi = np.linalg.solve(A, rhs)
        pi = np.clip(pi, 0.0, None)
        pi /= pi.sum()
    elif method == "power":
        pi = np.zeros(n)
        pi[0] = 1.0
    else:
        raise DomainError(f"unknown method {method!r}")
    for _ in range(max_iter):
        nxt = pi @ P
        tv = 0.5 * np.abs(nxt - pi).sum()
        pi = nxt
        if tv < tol:
            break
    else:
        raise NoConvergence(f"total variation {tv:.3g} after {max_iter} iterations")
    leak = float(pi @ kernel.tail)
    return PmfVector(pi, 0.0, 0.0,
                     note=f"truncated at N={kernel.N}; rows renormalized; per-step leak {leak:.3g}")


def invariance_residual(kernel: TruncatedKernel, pi: PmfVector) -> float:
    return float(np.abs(pi.probs @ kernel.renormalized - pi.probs).sum())


def conditional_law_given_survival(kernel: TruncatedKernel, x: int, n: int, *, tol: float = 1e-6) -> PmfVector:
    """Law of Z~_n given Z~_n != 0, started from x.

    The retained law is divided by the largest possible survival probability,
    so ``tail_mass`` is the conditional mass that may have escaped past N.
    """
    for k, v, lost in _absorbed_iter(kernel, x):
        if k == n:
            break
    S = v.sum()
    frac = lost / (S + lost)
    if frac > tol:
        raise TruncationTooSevere(
            f"escaped mass fraction {frac:.3g} exceeds {tol:.3g}; N must be >> n",
            bound=frac, tolerance=tol,
        )
    probs = np.concatenate([[0.0], v / (S + lost)])
    return PmfVector(probs, frac, 0.0)


def visit_generating(kernel: TruncatedKernel, k, x: int, s: float, *, tol: float = 1e-12,
                     max_iter: int = 1_000_000):
    """g_{k,x}(s) = sum_i P_x{Z~_i = k} s^{i+1} and its certified error.

    ``k`` may be an int or a sequence.  Once the walk survives to step L, the
    remaining visits to k are discounted by s^{L+1} and number at most
    1/P(A_k = 0) in expectation; the same bound covers mass lost past N.
    """
    M = kernel.config.M
    ks = np.atleast_1d(np.asarray(k, dtype=int))
    if M < 3:
        raise DomainError("g_{k,x} is defined for 1 <= k <= M-2, empty when M <= 2")
    if np.any(ks < 1) or np.any(ks > M - 2):
        raise DomainError(f"k must lie in 1..{M - 2}")
    if not 0 <= s <= 1:
        raise DomainError("s must lie in [0, 1]")
    p0 = np.array([np.prod(kernel.config.p_array[: kk + 1]) for kk in ks])
    acc = np.zeros(len(ks))
    lost_disc = 0.0
    prev_lost = 0.0
    for i, v, lost in _absorbed_iter(kernel, x):
        w = s ** (i + 1)
        acc += v[ks - 1] * w
        lost_disc += (lost - prev_lost) * w
        prev_lost = lost
        surv = v.sum()
        err = (surv * s ** (i + 2) + lost_disc) / p0
        if np.all(err <= tol) or w == 0.0:
            break
        if np.any(lost_disc / p0 > tol):
            # the lost-mass part only grows; more terms cannot help
            break
        if i >= max_iter:
            raise TruncationTooSevere(f"series not within {tol} after {max_iter} terms", bound=err.max(), tolerance=tol)
    if np.any(err > tol):
        raise TruncationTooSevere(f"error bound {err.max():.3g} exceeds {tol:.3g}", bound=err.max(), tolerance=tol)
    if np.ndim(k) == 0:
        return float(acc[0]), float(err[0])
    return acc, err


# ---------------------------------------------------------------------------
# conditional moments


@dataclass(frozen=True)
class MomentCorrections:
    """E[Z'-x | x] = -alpha + f1(x) and E[(Z'-x)^2 | x] = 2x + 2 f2(x)."""

    M: int
    alpha: float
    f1_low: tuple
    f2_low: tuple
    var_A: float

    def f1(self, x: int) -> float:
        return self.f1_low[x] if x < self.M - 1 else 0.0

    def f2(self, x: int) -> float:
        return self.f2_low[min(x, self.M - 1)]

    def table(self, xmax: int):
        return ([self.f1(x) for x in range(xmax + 1)], [self.f2(x) for x in range(xmax + 1)])


def conditional_moments(config: CookieConfig) -> MomentCorrections:
    """Exact f1, f2 from the moments of A_j.

    For x >= M-1 the next state is A_{M-1} + NB(x-M+1, 1/2), so
    E[(Z'-x)^2] = Var(A_{M-1}) + 2(x-M+1) + alpha^2 and f2 is constant.
    """
    M, a = config.M, config.alpha
    p = config.p_array
    f1, f2 = [], []
    for x in range(M):
        m1, m2 = A_moments(p, x)
        f1.append(m1 - x + a)
        f2.append((m2 - 2 * x * m1 + x * x - 2 * x) / 2)
    m1, m2 = A_moments(p, M - 1)
    var = m2 - m1 * m1
    # the x = M-1 entry from the generic formula must match the constant
    const = (a * a + var - 2 * (M - 1)) / 2
    assert abs(f2[M - 1] - const) <= 1e-9 * max(1.0, abs(const)), (f2[M - 1], const)
    assert abs(f1[M - 1]) <= 1e-12 * max(1, M)
    f1[M - 1] = 0.0
    return MomentCorrections(M, a, tuple(f1), tuple(f2), var)


def kernel_moment_corrections(kernel: TruncatedKernel, xmax: int):
    """f1, f2 read directly off the kernel rows (retained mass only)."""
    y = np.arange(kernel.N + 1, dtype=float)
    a = kernel.config.alpha
    f1, f2 = [], []
    for x in range(xmax + 1):
        r = kernel.P[x]
        f1.append(r @ y + kernel.tail_mean[x] - x + a)
        f2.append((r @ (y - x) ** 2 - 2 * x) / 2)
    return np.array(f1), np.array(f2)


# ---------------------------------------------------------------------------
# occupation identity


def occupation_identity(kernel: TruncatedKernel, f, pi: PmfVector = None):
    """Both sides of E_0[sum_{i<sigma} f(Z_i)] = E_0[sigma] E[f(Z_inf)].

    The left side is summed on the killed chain.  The right side uses the
    stationary law of the row-renormalized chain, for which the identity is
    exact, so the two sides differ only by what either chain does after its
    first jump past N.  The Lyapunov bound E_y[sigma] <= y/alpha + B holds
    for both (renormalizing a row can only lower its mean), which gives the
    returned certified ``bound`` for bounded ``f``.
    """
    fv = np.asarray(f(np.arange(kernel.N + 1)), dtype=float)
    u = kernel.solve_transient(fv[1:])
    lhs = fv[0] + kernel.P[0, 1:] @ u
    Es, _ = expected_sigma(kernel, 0)
    if pi is None:
        pi = stationary_law(kernel)
    Ef = pi.probs @ fv
    a, B = kernel.config.alpha, kernel.lyapunov_constant
    kept = kernel.P.sum(axis=1)
    cond_mean = (kernel.P @ np.arange(kernel.N + 1, dtype=float)) / kept
    b = kernel.tail_mean / a + B * kernel.tail + kernel.tail * (cond_mean / a + B)
    e = kernel.solve_transient(b[1:])
    bound = np.abs(fv).max() * (b[0] + kernel.P[0, 1:] @ e)
    return float(lhs), float(Es * Ef), float(bound)
