"""Runners for the twelve acceptance criteria.

Each runner returns a CriterionResult with the measured numbers, so the
test-suite and ``cookiewalk reproduce-paper --all`` share one implementation.
``quick=True`` shrinks replica counts for smoke runs; verdicts at quick size
are not acceptance verdicts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import bessel, genfun
from .branching import MigrationSampler, simulate_excursions
from .env import CookieConfig
from .kernel import (
    build_kernel,
    conditional_law_given_survival,
    law_of_A,
    stationary_law,
    survival_probabilities,
)
from .stats import fit_tail, fit_tail_curve
from .verify import coupling_check, martingale_flatness, optional_stopping_check
from .walk import simulate_walk_summary, sup_batch


def alpha_half() -> CookieConfig:
    """M=3, p_i = 3/4: alpha = 1/2, nu = 3/4."""
    return CookieConfig.uniform(3, "3/4")


def alpha_one() -> CookieConfig:
    return CookieConfig.uniform(3, "5/6")


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:2d} {self.name}: {self.summary} ({self.seconds:.1f}s)"

    def as_dict(self) -> dict:
        return {"number": self.number, "name": self.name, "passed": self.passed,
                "summary": self.summary, "details": _jsonable(self.details), "seconds": self.seconds}


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return v


def _timed(fn):
    def run(*a, **kw):
        t = time.perf_counter()
        res = fn(*a, **kw)
        res.seconds = time.perf_counter() - t
        return res
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


@_timed
def criterion_1(seed=1, quick=False, workers=None):
    """Median of sup_{k<=n} X_k grows like n^nu, nu = 3/4."""
    reps = 200 if quick else 2000
    grid = 2 ** np.arange(10, 18)
    sup, _, _ = sup_batch(alpha_half(), grid, reps, seed, workers=workers)
    med = np.median(sup, axis=0)
    slope = float(np.polyfit(np.log(grid), np.log(med), 1)[0])
    return CriterionResult(1, "sup exponent (alpha=1/2)", abs(slope - 0.75) <= 0.07,
                           f"slope {slope:.4f}, target 0.75 +- 0.07",
                           {"n": grid, "median_sup": med, "slope": slope, "replicas": reps})


@_timed
def criterion_2(seed=None, quick=False, workers=None):
    """Exact P_1{sigma > n} on n in [50, 500]."""
    k = build_kernel(alpha_half(), 4096)
    curve = survival_probabilities(k, 1, 500)
    r = fit_tail_curve(curve.n, curve.P, (50, 500))
    return CriterionResult(2, "sigma tail (exact kernel)", abs(r.exponent - 1.5) <= 0.1,
                           f"exponent {r.exponent:.4f}, target 1.5 +- 0.1, max truncation error {curve.err.max():.2g}",
                           r.as_dict())


@_timed
def criterion_3(seed=3, quick=False, workers=None):
    """Progeny tail from Monte Carlo excursions."""
    count = 10**5 if quick else 10**6
    b = simulate_excursions(alpha_half(), count, seed, workers=workers)
    r = fit_tail(b.progeny[~b.truncated], seed=seed)
    return CriterionResult(3, "progeny tail (Monte Carlo)", abs(r.exponent - 0.75) <= 0.1,
                           f"exponent {r.exponent:.4f} CI [{r.ci[0]:.3f}, {r.ci[1]:.3f}], target 0.75 +- 0.1",
                           {**r.as_dict(), "excursions": count, "truncated": b.n_truncated})


@_timed
def criterion_4(seed=None, quick=False, workers=None):
    """Stationary tail: pmf slope on [50, 2000]; alpha=1 with the log correction."""
    out = {}
    for label, cfg, target, tol, lc in (("alpha=1/2", alpha_half(), 0.5, 0.1, False),
                                        ("alpha=1", alpha_one(), 1.0, 0.15, True)):
        pi = stationary_law(build_kernel(cfg, 4096))
        x = np.arange(len(pi.probs))
        r = fit_tail_curve(x, pi.probs, (50, 2000), kind="pmf", log_correct=lc)
        out[label] = {"exponent": r.exponent, "target": target, "tol": tol,
                      "ok": abs(r.exponent - target) <= tol, "fit": r.as_dict(), "leak": pi.note}
    ok = all(v["ok"] for v in out.values())
    s = ", ".join(f"{k}: {v['exponent']:.4f} (target {v['target']} +- {v['tol']})" for k, v in out.items())
    return CriterionResult(4, "Z_infinity tail (exact stationary law)", ok, s, out)


@_timed
def criterion_5(seed=5, quick=False, workers=None):
    """Optional stopping at lambda in {0.2, 0.1, 0.05}."""
    cfg = alpha_half()
    k = build_kernel(cfg)
    count = 10**5 if quick else 10**6
    rows, ok = {}, True
    for i, lam in enumerate((0.2, 0.1, 0.05)):
        r = optional_stopping_check(cfg, lam, count, seed + i, k, workers=workers)
        good = r.passed(3.0)
        ok &= good
        rows[lam] = {"lhs": r.lhs, "rhs": r.rhs, "pooled_se": r.pooled_se, "paired_se": r.paired_se,
                     "z": r.z_pooled, "truncated": r.truncated, "far_steps": r.far_steps, "ok": good,
                     "lhs_over_lambda_nu": r.lhs / lam**cfg.nu}
    s = "; ".join(f"lam={l}: |diff|/SE={v['z']:.2f}" for l, v in rows.items())
    return CriterionResult(5, "optional-stopping identity", ok, s + " (need <= 3)", rows)


@_timed
def criterion_6(seed=6, quick=False, workers=None):
    """Flatness of mean Y_{n and sigma} for n <= 200 at lambda = 0.1."""
    reps = 10**4 if quick else 10**5
    f = martingale_flatness(alpha_half(), 0.1, 0, 200, reps, seed, workers=workers)
    ok = f.max_deviation_se <= 4 and f.max_increment <= f.increment_cap
    return CriterionResult(6, "martingale flatness", ok,
                           f"max deviation {f.max_deviation_se:.2f} SE (need <= 4), "
                           f"max increment {f.max_increment:.3f} <= {f.increment_cap:.3f}",
                           {"max_deviation_se": f.max_deviation_se, "max_deviation": f.max_deviation,
                            "Y0": f.Y0, "max_increment": f.max_increment, "replicas": reps})


@_timed
def criterion_7(seed=7, quick=False, workers=None):
    """Gap K_n between T_n and n + 2 sum Z_k stabilizes in law from n=500 to n=1000."""
    reps = 10**4 if quick else 10**5
    r = coupling_check(alpha_half(), (500, 1000), reps, seed, workers=workers)
    d, se = r.mean_drift()
    return CriterionResult(
        7, "hitting-time coupling", r.passed(),
        f"KS(G_500, G_1000) = {r.ks_consecutive[0]:.4f} (need <= {r.ks_threshold}), "
        f"mean drift {d:.1f} vs 3 SE = {3 * se:.1f}",
        {"ks": r.ks_consecutive, "ks_threshold": r.ks_threshold, "ks_critical_5pct": r.ks_critical,
         "mean_gap": r.mean_gap, "se_gap": r.se_gap, "drift": d, "capped": r.capped,
         "law_ks_sumZ": r.law_ks, "law_pvalue_sumZ": r.law_pvalue, "paired_independent_ks": r.paired_ks,
         "replicas": reps},
    )


@_timed
def criterion_8(seed=None, quick=False, workers=None):
    """Deterministic identities."""
    cfg = alpha_half()
    n = np.arange(10**4 + 1)
    Fs = genfun.F_iter_seq(10**4)
    f_err = float(np.abs(Fs - (1 - 1 / (n + 1))).max())
    A = law_of_A(cfg, cfg.M - 1)
    a_err = abs(A.mean() - (cfg.M - 1 - cfg.alpha))
    k = build_kernel(cfg, 4096)
    row_err = float(k.row_mean_residuals().max())
    bt = bessel.self_test()
    dec = genfun.J_series(1, 0.5, k)
    checks = {
        "F_n closed form": (f_err, 1e-12),
        "mean A_{M-1}": (a_err, 1e-12),
        "kernel row means": (row_err, 1e-9),
        "J decomposition at (x=1, s=0.5)": (dec.discrepancy, 1e-6),
    }
    ok = all(v <= t for v, t in checks.values()) and bt["ok"]
    s = ", ".join(f"{k_}: {v:.2g}" for k_, (v, _) in checks.items()) + f", Bessel grid ok={bt['ok']}"
    return CriterionResult(8, "exact identities", ok, s,
                           {"checks": {k_: {"value": v, "tol": t} for k_, (v, t) in checks.items()},
                            "bessel": bt})


@_timed
def criterion_9(seed=None, quick=False, workers=None):
    """Z_n / n given survival at n = 200 against 1 - e^{-r}."""
    k = build_kernel(alpha_half(), 8000)
    law = conditional_law_given_survival(k, 1, 200)
    F = np.cumsum(law.probs)
    z = np.arange(len(F))
    G = 1 - np.exp(-z / 200)
    left = np.concatenate([[0.0], F[:-1]])
    d = float(max(np.abs(F - G).max(), np.abs(left - G).max())) + law.tail_mass
    return CriterionResult(9, "conditional exponential limit", d <= 0.05,
                           f"sup distance {d:.4f} (need <= 0.05), conditional mean / n = {law.mean() / 200:.4f}",
                           {"sup_distance": d, "mean_over_n": law.mean() / 200, "escaped": law.tail_mass})


@_timed
def criterion_10(seed=10, quick=False, workers=None):
    """Recurrent walk returns often; ballistic walk has a stable speed."""
    rec = CookieConfig.uniform(1, "3/4")      # alpha = -1/2
    fast = CookieConfig.uniform(3, "9/10")    # alpha = 1.4
    reps = 20 if quick else 100
    cps = np.array([10**6], np.int64)
    returns = [simulate_walk_summary(rec, 10**6, seed * 1000 + r, checkpoints=cps).returns_to_origin
               for r in range(reps)]
    frac = float(np.mean(np.array(returns) >= 100))
    speed_reps = 20
    v = np.array([simulate_walk_summary(fast, 10**6, seed * 1000 + 500 + r, checkpoints=cps).pos_at[-1] / 1e6
                  for r in range(speed_reps)])
    spread = float(v.std(ddof=1) / v.mean())
    ok = frac >= 0.95 and v.mean() > 0 and spread < 0.10
    return CriterionResult(10, "regime sanity", ok,
                           f"alpha=-1/2: {100 * frac:.0f}% of walks with >= 100 returns; "
                           f"alpha=1.4: speed {v.mean():.4f}, relative spread {spread:.4f}",
                           {"returns": returns, "fraction": frac, "speeds": v, "spread": spread})


@_timed
def criterion_11(seed=11, quick=False, workers=None):
    """(log n / n) median sup_{k<=n} X_k is flat between 2^14 and 2^17 at alpha = 1."""
    reps = 200 if quick else 2000
    grid = np.array([2**14, 2**17], np.int64)
    sup, _, _ = sup_batch(alpha_one(), grid, reps, seed, workers=workers)
    med = np.median(sup, axis=0)
    scaled = med * np.log(grid) / grid
    ratio = float(scaled[1] / scaled[0])
    return CriterionResult(11, "alpha=1 log-speed constancy", abs(ratio - 1) <= 0.2,
                           f"ratio {ratio:.4f} (need within 20% of 1)",
                           {"scaled": scaled, "ratio": ratio, "replicas": reps})


@_timed
def criterion_12(seed=12, quick=False, workers=None):
    """Property suites: monotone coupling, Chapman-Kolmogorov, row shift, reproducibility, coverage."""
    cfg = alpha_half()
    res = {}
    s = MigrationSampler(cfg, seed)
    mono = True
    for x, y in ((0, 0), (0, 5), (3, 4), (2, 40), (10, 11)):
        a, b = s.coupled_step(x, y, 20000)
        mono &= bool(np.all(a <= b))
    res["monotone coupling"] = mono

    k = build_kernel(cfg, 1024)
    P = k.P
    two = P @ P
    three_a, three_b = two @ P, P @ two
    res["Chapman-Kolmogorov"] = bool(np.abs(three_a - three_b).max() < 1e-14)
    # Monte Carlo two-step law from 3 against P^2
    z1 = s.step(3, 200_000)
    z2 = np.array([s.step(int(z)) for z in z1[:20000]])
    emp = np.bincount(z2, minlength=40)[:40] / len(z2)
    sd = np.sqrt(two[3, :40] * (1 - two[3, :40]) / len(z2))
    res["two-step law vs P^2"] = bool(np.all(np.abs(emp - two[3, :40]) <= 5 * sd + 1e-12))

    g = 0.5 ** np.arange(1, k.N + 2)
    shift = 0.0
    for i in range(cfg.M - 1, 200):
        conv = np.convolve(P[i], g)[: k.N + 1]
        shift = max(shift, float(np.abs(conv - P[i + 1]).max()))
    res["row-shift convolution"] = shift < 1e-14

    b1 = simulate_excursions(cfg, 5000, seed)
    b2 = simulate_excursions(cfg, 5000, seed)
    w1 = sup_batch(cfg, [1000], 50, seed)[0]
    w2 = sup_batch(cfg, [1000], 50, seed)[0]
    res["reproducibility"] = bool(np.array_equal(b1.progeny, b2.progeny) and np.array_equal(w1, w2))

    reps = 30 if quick else 100
    rng = np.random.default_rng(seed)
    hits = 0
    for i in range(reps):
        xs = rng.uniform(size=10**4) ** (-1 / 1.5)
        r = fit_tail(xs, seed=i)
        hits += r.ci[0] <= 1.5 <= r.ci[1]
    cov = 100.0 * hits / reps
    res["tail-fit coverage"] = 85 <= cov <= 100
    ok = all(res.values())
    return CriterionResult(12, "property suites", ok,
                           ", ".join(f"{k_}={'ok' if v else 'FAIL'}" for k_, v in res.items()) + f" (coverage {cov:.0f}%)",
                           {"checks": res, "coverage_percent": cov, "row_shift_max_error": shift})


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 13)}


def run_all(numbers=None, *, quick=False, workers=None, log=print) -> list:
    out = []
    for i in numbers or sorted(CRITERIA):
        r = CRITERIA[i](quick=quick, workers=workers)
        if log:
            log(r.line())
        out.append(r)
    return out
