"""
Excursions of the branching process
===================================

Down-crossings of the walk form a branching process Z with migration.  Its
excursion length sigma has tail n^{-(alpha+1)}, its total progeny has tail
x^{-nu}.  The first is computed exactly from the truncated kernel, the
second by Monte Carlo.
"""

import numpy as np

import cookiewalk as cw
from cookiewalk.stats import fit_tail_curve

cfg = cw.CookieConfig.uniform(3, "3/4")
kernel = cw.build_kernel(cfg, 4096)

# exact survival curve P_1(sigma > n) with its truncation error
curve = cw.survival_probabilities(kernel, 1, 500)
fit = fit_tail_curve(curve.n, curve.P, (50, 500))
print(f"sigma tail exponent {fit.exponent:.4f} (alpha + 1 = {cfg.alpha + 1}), worst error {curve.err.max():.1e}")

E0, err = cw.expected_sigma(kernel, 0)
print(f"E_0 sigma = {E0:.6f} +- {err:.1e}")

# the same quantities from simulated excursions
batch = cw.simulate_excursions(cfg, 200_000, seed=11)
m, se = batch.mean_sigma()
print(f"Monte Carlo E_0 sigma = {m:.4f} +- {se:.4f}")

prog = batch.progeny[~batch.truncated]
tail = cw.fit_tail(prog[prog > 0], window=(20, np.quantile(prog, 0.999)))
print(f"progeny tail exponent {tail.exponent:.3f}, 95% interval [{tail.ci[0]:.3f}, {tail.ci[1]:.3f}] (nu = {cfg.nu})")

# stationary law of Z: pmf ~ x^{-alpha-1}
pi = cw.stationary_law(kernel)
pfit = fit_tail_curve(np.arange(len(pi.probs)), pi.probs, (50, 2000), kind="pmf")
print(f"Z_infinity tail exponent {pfit.exponent:.4f} (alpha = {cfg.alpha})")
