"""
A cookie walk with three cookies per site
=========================================

Each site holds three cookies of strength 3/4.  Alpha = 1/2, so the walk is
transient to the right with zero speed and sup_{k<=n} X_k grows like n^{3/4}.
"""

import numpy as np

import cookiewalk as cw
from cookiewalk.walk import checkpoint_grid

cfg = cw.CookieConfig.uniform(3, "3/4")
print(cfg, "alpha =", cfg.alpha, "nu =", cfg.nu)

# one path of 100000 steps; write it out for plotting
trace = cw.simulate_walk(cfg, 100_000, seed=2024)
trace.to_csv("sample_path.csv")
print("final position", trace.positions[-1], "max", trace.positions.max(), "min", trace.positions.min())

# cookies eaten: min(visits, 3) at every visited site
eaten = np.array(list(trace.consumed_cookies.values()))
print("sites visited", len(eaten), "fully eaten", int((eaten == 3).sum()))

# median sup over 500 walks at doubling times; the log-log slope approaches nu
grid = checkpoint_grid(2**15)[6:]
sup, _, _ = cw.sup_batch(cfg, grid, 500, seed=7)
med = np.median(sup, axis=0)
for n, m in zip(grid, med):
    print(f"n = {n:6d}   median sup = {m:7.1f}   sup / n^nu = {m / n**cfg.nu:.3f}")
slope = np.polyfit(np.log(grid), np.log(med), 1)[0]
print(f"fitted exponent {slope:.3f} (nu = {cfg.nu})")
