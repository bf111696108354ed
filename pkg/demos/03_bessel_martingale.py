"""
The Bessel martingale and optional stopping
===========================================

With phi(x) = F_nu(sqrt(lambda) x), F_nu(x) = x^nu K_nu(x), the process
Y_n = exp(-lambda S_{n-1}) phi(Z_n) + sum_{k<n} mu(k) is a martingale.
Stopping it at the end of an excursion gives
E[1 - exp(-lambda S)] = E[sum mu] / phi(0).
"""

import cookiewalk as cw
from cookiewalk.bessel import self_test
from cookiewalk.verify import martingale_flatness, martingale_trace, optional_stopping_check

cfg = cw.CookieConfig.uniform(3, "3/4")
kernel = cw.build_kernel(cfg, 4096)

# the special-function identities the construction rests on
res = self_test()
print("Bessel identities:", {k: (f"{v:.1e}" if isinstance(v, float) else v) for k, v in res.items()})

# one path of Z with W, mu and Y alongside
tr = martingale_trace(cfg, 0.1, start=20, n_max=5000, seed=3, kernel=kernel)
print(f"path of length {len(tr.Z)}: Y_0 = {tr.Y[0]:.4f}, Y at the end = {tr.Y[-1]:.4f}")

# mean of Y over many paths stays at Y_0
flat = martingale_flatness(cfg, 0.1, start=10, n_max=200, replicas=100_000, seed=4, kernel=kernel)
print(f"largest deviation of mean Y_n from Y_0: {flat.max_deviation_se:.2f} standard errors")

for lam in (0.2, 0.1, 0.05):
    r = optional_stopping_check(cfg, lam, 200_000, seed=5, kernel=kernel)
    print(f"lambda = {lam:<5} lhs = {r.lhs:.5f}  rhs = {r.rhs:.5f}  |diff| / SE = {r.z_pooled:.2f}")
