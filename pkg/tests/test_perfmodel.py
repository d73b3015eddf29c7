import csv
import heapq
import math

import numpy as np
import pytest
from scipy import integrate

from autonom import perfmodel as pm
from autonom.kernels import lindley_waits


def test_mttd_closed_form():
    assert pm.mttd([2, 3, 5]) == 0.1
    assert pm.mttd([4]) == 0.25
    with pytest.raises(pm.PerfModelError):
        pm.mttd([1, 0])


def test_mttd_uniform_rates_against_quadrature():
    exact, _ = integrate.dblquad(lambda y, x: 1.0 / (x + y), 1, 3, 1, 3)
    exact /= 4.0  # uniform density on [1,3]^2
    est = pm.mttd(pm.NetworkPerf(sampler=pm.uniform_rates(1, 3, 2)), samples=10**6, seed=0)
    assert abs(est - exact) / exact < 0.005


def test_mttd_monte_carlo_error_shrinks_like_root_n():
    exact = integrate.dblquad(lambda y, x: 1.0 / (x + y), 1, 3, 1, 3)[0] / 4.0
    perf = pm.NetworkPerf(sampler=pm.uniform_rates(1, 3, 2))

    def rms(n):
        return math.sqrt(np.mean([(pm.mttd(perf, n, seed=s) - exact) ** 2 for s in range(40)]))

    ratio = rms(2_000) / rms(8_000)
    assert 1.0 < ratio < 4.0  # 2 expected, within a noise factor of 2


def test_block_time_and_work():
    assert pm.block_time_model(10, 5) == 2.0
    assert pm.block_time_model(1e6, 1e6) == 1.0
    assert pm.block_time_model(10, 10) == pm.block_time_model(10, 5) / 2
    assert pm.expected_pow_work(0) == 1 and pm.expected_pow_work(2) == 256
    with pytest.raises(pm.PerfModelError):
        pm.block_time_model(0, 1)


def test_wq_and_mttr():
    assert pm.wq(pm.QueueParams(1, 2)) == 0.5
    assert pm.wq(pm.QueueParams(0.9, 1)) == pytest.approx(9.0, rel=1e-12)
    with pytest.raises(pm.UnstableQueue):
        pm.wq(pm.QueueParams(1, 1))
    b = pm.mttr_breakdown(pm.QueueParams(1, 2), 10, 5)
    assert (b.wq, b.block_time, b.total) == (0.5, 2.0, 2.5)
    assert pm.mttr(pm.QueueParams(1, 2), 10, 5) == 2.5
    assert pm.mttr(pm.QueueParams(1, 2), 1, 1e300) == pytest.approx(0.5)


def event_driven_waits(arrival_gaps, service):
    """Single-server FIFO queue simulated with an event heap."""
    events, t = [], 0.0
    for k, gap in enumerate(arrival_gaps):
        t = t + gap if k else 0.0
        heapq.heappush(events, (t, 0, k))
    free_at, waits = 0.0, [0.0] * len(service)
    while events:
        now, _, k = heapq.heappop(events)
        start = max(now, free_at)
        waits[k] = start - now
        free_at = start + service[k]
    return np.array(waits)


def test_lindley_matches_event_simulation():
    rng = np.random.default_rng(2)
    a, s = rng.exponential(2.0, 3000), rng.exponential(1.0, 3000)
    np.testing.assert_allclose(lindley_waits(a, s), event_driven_waits(a, s), atol=1e-9)


@pytest.mark.parametrize("lam", [0.3, 0.5, 0.8])
@pytest.mark.parametrize("estimator", ["plain", "control"])
def test_mm1_close_to_analytic_on_average(lam, estimator):
    # Averaging several seeds keeps this a check on bias, not on one draw
    p = pm.QueueParams(lam, 1.0)
    sims = [pm.mm1_simulate(p, 100_000, seed=s, estimator=estimator) for s in range(8)]
    assert abs(np.mean(sims) - pm.wq(p)) / pm.wq(p) < 0.04


def test_mm1_light_load_and_determinism():
    assert pm.mm1_simulate(pm.QueueParams(0.01, 1.0), 10_000, seed=1) < 0.05
    p = pm.QueueParams(0.5, 1.0)
    assert pm.mm1_simulate(p, 20_000, seed=9) == pm.mm1_simulate(p, 20_000, seed=9)
    with pytest.raises(pm.UnstableQueue):
        pm.mm1_simulate(pm.QueueParams(1.0, 1.0))
    with pytest.raises(ValueError):
        pm.mm1_simulate(p, 20_000, estimator="other")


def test_control_variate_reduces_spread():
    p = pm.QueueParams(0.8, 1.0)
    plain = [pm.mm1_simulate(p, 20_000, seed=s, estimator="plain") for s in range(30)]
    control = [pm.mm1_simulate(p, 20_000, seed=s) for s in range(30)]
    assert np.std(control) < np.std(plain)


def test_mining_attempts_d2_near_256():
    attempts = pm.mining_attempts(2, 200, seed=5)
    assert 128 <= attempts.mean() <= 512


def test_sweep_rows_and_csv(tmp_path):
    rows = pm.difficulty_sweep(range(0, 3), trials=40, hash_probe_size=2000, seed=1)
    assert [r.d for r in rows] == [0, 1, 2]
    assert rows[0].mean_attempts == 1.0
    assert all(a.mean_attempts <= b.mean_attempts for a, b in zip(rows, rows[1:]))
    again = pm.difficulty_sweep(range(0, 3), trials=40, hash_probe_size=2000, seed=1)
    assert [r.mean_attempts for r in again] == [r.mean_attempts for r in rows]
    out = tmp_path / "sweep.csv"
    pm.write_sweep_csv(rows, out)
    with open(out) as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["d", "mean_attempts", "mean_seconds", "log_mean_seconds"]
    assert len(table) == 4
    for r in rows:
        assert r.log_mean_seconds == pytest.approx(math.log10(r.mean_seconds))


def test_sweep_rejects_large_difficulty():
    with pytest.raises(pm.PerfModelError):
        pm.difficulty_sweep([5], trials=1)


def test_log16_slope_of_exact_powers():
    rows = [pm.SweepRow(d, 16.0**d, 1.0, 0.0) for d in range(1, 4)]
    assert pm.log16_slope(rows) == pytest.approx(1.0)
