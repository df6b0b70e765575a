import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from discmax.dist_core import Geometric, LogTime, Poisson, block_start
from discmax.oracle import EventFamily, expected_hits, max_cdf
from discmax.record_sim import (
    FAMILIES,
    PATH_BLOCK,
    RecordPath,
    SimConfig,
    block_hits,
    conditional_value_from_uniform,
    path_generator,
    run_ensemble,
    sample_conditional_value,
    sample_max_at,
    sample_record_waiting,
    simulate_paths,
    simulate_record_path,
    waiting_from_uniform,
)


def test_waiting_examples():
    rng = np.random.default_rng(0)
    assert all(sample_record_waiting(rng, 0.0) == LogTime.from_int(1) for _ in range(20))
    assert waiting_from_uniform(0.25, math.log(0.5)) == LogTime.from_int(2)
    assert waiting_from_uniform(0.5, math.log(0.5)) == LogTime.from_int(1)


def test_waiting_tiny_q_log_mean():
    rng = np.random.default_rng(3)
    logs = np.array([sample_record_waiting(rng, -50.0).log for _ in range(20000)])
    # ln W = 50 + ln E with E ~ Exp(1): E ln E = -euler_gamma
    assert logs.mean() == pytest.approx(50 - np.euler_gamma, abs=4 * math.pi / math.sqrt(6 * 20000))


def test_waiting_geometric_law():
    rng = np.random.default_rng(5)
    q = 0.3
    w = np.array([sample_record_waiting(rng, math.log(q)).exact for _ in range(40000)])
    ks = np.arange(1, 8)
    emp = np.array([np.mean(w == k) for k in ks])
    want = q * (1 - q) ** (ks - 1)
    assert np.all(np.abs(emp - want) < 4 * np.sqrt(want * (1 - want) / w.size))


def test_conditional_value(poisson_one, geo_half):
    assert conditional_value_from_uniform(poisson_one, 1e-300, 3) == 4
    u = np.random.default_rng(1).random(200_000)
    v = conditional_value_from_uniform(poisson_one, u, 3)
    assert np.all(v > 3)
    assert np.mean(v == 4) == pytest.approx(0.80725634134928, abs=4 * math.sqrt(0.19 * 0.81 / u.size))
    # memoryless: v - m - 1 is again Geometric(q)
    g = conditional_value_from_uniform(geo_half, u, 6) - 7
    base = conditional_value_from_uniform(geo_half, u, -1)
    assert np.array_equal(g, base)
    rng = np.random.default_rng(2)
    assert sample_conditional_value(poisson_one, rng, -1) >= 0
    with pytest.raises(ValueError):
        sample_conditional_value(poisson_one, rng, -2)


def test_record_path_structure(poisson_one):
    rng = path_generator(0, 0)
    path = simulate_record_path(poisson_one, 60, rng)
    assert np.all(np.diff(path.values) > 0)
    assert np.all(np.diff(path.keys) > 0)
    assert path.log_times[0] == 0.0 and path.exact_times[0] == 1
    assert len(path) < 200
    assert path.horizon == block_start(poisson_one, 61)


def test_record_path_tiny_horizon(geo_half):
    path = simulate_record_path(geo_half, 1, np.random.default_rng(0), horizon=LogTime.from_int(1))
    assert len(path) == 1


def test_from_sequence_and_expand():
    xs = [0, 2, 1, 2, 5, 3, 5, 6]
    p = RecordPath.from_sequence(xs)
    assert list(p.values) == [0, 2, 5, 6]
    assert list(p.exact_times) == [1, 2, 5, 8]
    assert list(p.expand(8)) == list(np.maximum.accumulate(xs))
    assert p.value_at(4) == 2 and p.value_at(LogTime.from_int(5)) == 5


def test_block_hits_constructed(geo_half):
    path = RecordPath.from_records([(1, 5)], 1000)
    assert block_hits(path, geo_half, 3, 2) == (True, False, False)
    assert block_hits(path, geo_half, 3, 1)[1] is False
    assert block_hits(path, geo_half, 3, -2) == (False, True, True)
    with pytest.raises(ValueError):
        block_hits(path, geo_half, 12, 0)


def test_block_hits_short_visit(geo_half):
    # M = 4 only on [9, 12): inside I_3 = [8, 16)
    path = RecordPath.from_records([(1, 1), (9, 4), (12, 6)], 100)
    assert block_hits(path, geo_half, 3, 1)[0]
    assert not block_hits(path, geo_half, 4, 0)[0]      # I_4 = [16, 32), M = 6 there
    assert block_hits(path, geo_half, 4, 2)[0]
    assert block_hits(path, geo_half, 3, 2) == (False, True, True)   # M_8 = 1


def test_sample_max_matches_closed_form(geo_half):
    x = sample_max_at(geo_half, 1000, 100_000, seed=11)
    grid = np.arange(0, 30)
    ecdf = np.searchsorted(np.sort(x), grid, side="right") / x.size
    assert np.max(np.abs(ecdf - max_cdf(geo_half, 1000, grid))) < 0.006


def test_jump_chain_vs_direct_small_n(poisson_one):
    rng = np.random.default_rng(4)
    direct = np.maximum.accumulate(
        np.searchsorted(np.cumsum(stats.poisson.pmf(np.arange(30), 1.0)), rng.random((20000, 50))), axis=1)
    jump = sample_max_at(poisson_one, 50, 20000, seed=5)
    assert stats.ks_2samp(direct[:, -1], jump).pvalue > 1e-3


def test_paths_reproducible_per_index(poisson_one):
    horizon = block_start(poisson_one, 20)
    a = simulate_paths(poisson_one, horizon, 2 * PATH_BLOCK + 5, seed=9)
    b = simulate_paths(poisson_one, horizon, PATH_BLOCK, seed=9, first_path=PATH_BLOCK)
    for i in range(PATH_BLOCK):
        assert np.array_equal(a[PATH_BLOCK + i].values, b[i].values)
        assert np.array_equal(a[PATH_BLOCK + i].keys, b[i].keys)
    # a short run is a prefix of a longer one
    c = simulate_paths(poisson_one, horizon, 10, seed=9)
    assert all(np.array_equal(a[i].values, c[i].values) for i in range(10))
    with pytest.raises(ValueError):
        simulate_paths(poisson_one, horizon, 5, seed=9, first_path=3)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(K=0, paths=1)
    with pytest.raises(ValueError):
        SimConfig(K=1, paths=1, offsets=(2, 1))
    assert list(SimConfig(K=1, paths=1, offsets=(-2, 3)).offset_values) == [-2, -1, 0, 1, 2, 3]


def test_ensemble_deterministic(poisson_one, tmp_path):
    cfg = SimConfig(K=12, paths=1, seed=3)
    a, b = run_ensemble(poisson_one, cfg), run_ensemble(poisson_one, cfg)
    for fam in FAMILIES:
        assert np.array_equal(a.hits[fam], b.hits[fam])
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "path,k,event,l,hit"


def test_ensemble_workers_match_serial(poisson_one):
    serial = run_ensemble(poisson_one, SimConfig(K=15, paths=2 * PATH_BLOCK + 3, seed=4))
    par = run_ensemble(poisson_one, SimConfig(K=15, paths=2 * PATH_BLOCK + 3, seed=4, workers=2))
    for fam in FAMILIES:
        assert np.array_equal(serial.hits[fam], par.hits[fam])


def test_ensemble_matches_ledger_poisson(poisson_one):
    m = run_ensemble(poisson_one, SimConfig(K=60, paths=1000, seed=1, offsets=(1, 3)))
    for fam, l in [(EventFamily.UPPER, 3), (EventFamily.LOWER_EQUAL, 1)]:
        tot = m.totals(fam, l)
        led = expected_hits(poisson_one, 60, l, fam)
        se = math.sqrt(max(tot.var(ddof=1), led.variance_bound()) / tot.size)
        assert abs(tot.mean() - led.total) < 3 * se
    # per-cell rates within 3 binomial errors (plus a small allowance for 60 cells)
    rates, exact = m.hit_rates(EventFamily.LOWER_EQUAL), m.exact[EventFamily.LOWER_EQUAL]
    se = np.sqrt(np.maximum(exact * (1 - exact), 1e-4) / 1000)
    assert np.mean(np.abs(rates - exact) < 3 * se) > 0.95


def test_ensemble_geometric_upper_rate(geo_half):
    m = run_ensemble(geo_half, SimConfig(K=100, paths=1000, seed=2, offsets=(0, 0)))
    assert m.hit_rates(EventFamily.UPPER)[:, 0].mean() > 0.2
    s = m.summary()
    assert set(s["events"]) == {f"{f.value}:0" for f in FAMILIES}
    assert len(s["events"]["upper:0"]["hit_rate"]) == 100


def test_lower_equal_anywhere_equals_upper_mirror(poisson_one):
    m = run_ensemble(poisson_one, SimConfig(K=20, paths=200, seed=8, offsets=(-2, 2)))
    assert np.array_equal(m.lower_equal_anywhere(1), m.hits[EventFamily.UPPER][:, :, m.column(-1)])


# ---- property suites ----

@given(st.integers(0, 2**32), st.integers(1, 18), st.integers(-3, 3))
def test_prop_block_hits_vs_scan(seed, k, l):
    d = Geometric(0.5)
    nk, nk1 = block_start(d, k).exact, block_start(d, k + 1).exact
    path = simulate_record_path(d, k, np.random.default_rng(seed))
    M = path.expand(nk1 - 1)
    block = M[nk - 1:nk1 - 1]
    up, le, eq = block_hits(path, d, k, l)
    assert up == bool(np.any(block == k + l))
    assert le == bool(np.any(block <= k - l)) == (M[nk - 1] <= k - l)
    assert eq == (M[nk - 1] == k - l)
    assert (not eq) or le


@given(st.integers(0, 2**32), st.sampled_from([Poisson(1.0), Poisson(0.5), Geometric(0.3)]))
def test_prop_record_path_invariants(seed, d):
    path = simulate_record_path(d, 25, np.random.default_rng(seed))
    assert np.all(np.diff(path.values) > 0)
    assert np.all(np.diff(path.keys) > 0)
    assert path.exact_times[0] == 1
    assert path.keys[-1] <= path.horizon.key


@given(st.integers(0, 2**63))
def test_prop_ensemble_determinism(seed):
    d = Geometric(0.5)
    cfg = SimConfig(K=8, paths=3, seed=seed, offsets=(-1, 1))
    a, b = run_ensemble(d, cfg), run_ensemble(d, cfg)
    for fam in FAMILIES:
        assert np.array_equal(a.hits[fam], b.hits[fam])
    assert np.all(a.hits[EventFamily.LOWER_AT_MOST] | ~a.hits[EventFamily.LOWER_EQUAL])
