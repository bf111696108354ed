from collections import Counter

import numpy as np
import pytest
from scipy import stats as sps

from cookiewalk.env import CookieConfig, EnvironmentVariant
from cookiewalk.errors import DomainError, ResourceError, StepCapExceeded
from cookiewalk.walk import (
    checkpoint_grid, default_horizon, estimate_escape_tail, hitting_batch, hitting_times,
    simulate_walk, simulate_walk_summary, sup_batch,
)


def test_trace_shape_and_steps(half):
    tr = simulate_walk(half, 5000, 1)
    assert tr.positions[0] == 0 and len(tr.positions) == 5001
    assert np.all(np.abs(np.diff(tr.positions)) == 1)


def test_trace_reproducible(half):
    a = simulate_walk(half, 10_000, 42).positions
    b = simulate_walk(half, 10_000, 42).positions
    c = simulate_walk(half, 10_000, 43).positions
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_cookie_accounting(half):
    tr = simulate_walk(half, 20_000, 5)
    # visits happen at the departure sites X_0..X_{n-1}
    visits = Counter(tr.positions[:-1].tolist())
    for site, c in tr.visit_counts.items():
        assert c == min(visits[site], half.M + 1)
    assert tr.consumed_cookies == {s: min(c, half.M) for s, c in tr.visit_counts.items()}


def test_neutral_cookies_fair():
    c = CookieConfig.from_strengths([0.5])
    up = np.diff(simulate_walk(c, 10**6, 7).positions) > 0
    n = len(up)
    assert abs(up.mean() - 0.5) <= 3 * np.sqrt(0.25 / n)


def test_first_steps_follow_cookies(half):
    # on the first visit to 0 the walk steps right with probability 3/4
    first = np.array([simulate_walk(half, 1, s).positions[1] for s in range(4000)])
    up = (first > 0).mean()
    assert abs(up - 0.75) <= 4 * np.sqrt(0.75 * 0.25 / 4000)


def test_ballistic_speed():
    fast = CookieConfig.uniform(3, "9/10")
    v = [simulate_walk_summary(fast, 10**6, s, checkpoints=[10**6]).pos_at[-1] / 1e6 for s in range(5)]
    assert min(v) > 0.5 and np.std(v) / np.mean(v) < 0.1


def test_memory_budget(half):
    with pytest.raises(ResourceError):
        simulate_walk(half, 10**6, 1, max_path_steps=1000)


def test_checkpoint_grid():
    g = checkpoint_grid(1000)
    assert g[0] == 1 and g[-1] == 1000 and np.all(np.diff(g) > 0)


def test_summary_sup_monotone(half):
    s = simulate_walk_summary(half, 2**14, 3)
    assert np.all(np.diff(s.sup_at) >= 0)
    assert np.all(s.sup_at >= s.pos_at)


def test_summary_matches_trace(half):
    n = 4096
    tr = simulate_walk(half, n, 11)
    s = simulate_walk_summary(half, n, 11)
    run_max = np.maximum.accumulate(tr.positions)
    assert np.array_equal(s.sup_at, run_max[s.checkpoints])
    assert np.array_equal(s.pos_at, tr.positions[s.checkpoints])


def test_hitting_record(half):
    r = hitting_times(half, 200, 3)
    assert np.all(np.diff(r.T) > 0) and r.T[0] >= 1
    # parity: T_n has the parity of n
    assert np.all((r.T - r.levels) % 2 == 0)
    assert np.all(r.inf_after_hit <= r.levels)
    assert np.array_equal(r.horizon, default_horizon(r.levels, half.nu))


def test_hitting_decomposition(half):
    r = hitting_times(half, 300, 8)
    # T_n = n + 2 * (left steps before T_n)
    assert np.all(r.T == r.levels + 2 * (r.left_steps_negative + r.left_steps_nonnegative))


def test_recurrent_needs_cap():
    rec = CookieConfig.uniform(1, "3/4")
    with pytest.raises(DomainError):
        hitting_times(rec, 10, 1)
    with pytest.raises(StepCapExceeded):
        hitting_times(rec, 10**6, 1, step_cap=1000, levels=[10**6], horizon=[-1])


def test_hitting_time_growth(half):
    # mean of log T_n grows like (1/nu) log n
    levels = np.array([64, 128, 256, 512])
    T = np.array([hitting_times(half, 512, s, horizon=np.zeros(4, np.int64), levels=levels).T
                  for s in range(300)])
    slope = np.polyfit(np.log(levels), np.log(np.median(T, axis=0)), 1)[0]
    assert abs(slope - 1 / half.nu) < 0.15


def test_hitting_batch_matches_single(half):
    hb = hitting_batch(half, 100, 20, 5)
    assert np.all(hb["T"] == 100 + 2 * (hb["left_negative"] + hb["left_nonnegative"]))
    assert not hb["capped"].any()


def test_sup_monotone_in_strengths():
    lo, hi = CookieConfig.uniform(3, "3/5"), CookieConfig.uniform(3, "4/5")
    a = sup_batch(lo, [4096], 400, 1)[0][:, 0]
    b = sup_batch(hi, [4096], 400, 2)[0][:, 0]
    # one-sided KS: hi's sup is stochastically larger
    res = sps.ks_2samp(a, b, alternative="less")
    assert res.pvalue > 0.01 and np.median(b) > np.median(a)


def test_escape_tail(half):
    est = estimate_escape_tail(EnvironmentVariant.positive_half_line(half), [0, 1, 2, 4, 8], 3000, 2)
    assert est.raw[0] == 1.0
    assert np.all(np.diff(est.corrected) <= 0)
    assert np.all(np.diff(est.raw) <= 3 * np.sqrt(0.25 / 3000))
    assert est.raw[-1] < 0.5
    assert np.all(est.ci_low <= est.raw) and np.all(est.raw <= est.ci_high)
