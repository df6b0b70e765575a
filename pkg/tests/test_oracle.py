import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from discmax.dist_core import Geometric, LogTime, Poisson, block_start
from discmax.oracle import (
    BudgetExceededError,
    EventFamily,
    expected_hits,
    direct_simulate_max,
    hit_probability_exact,
    log_max_cdf,
    max_cdf,
    max_pmf,
    upper_hit_probability,
    upper_probability_bruteforce,
)


def test_max_cdf_single_draw(poisson_one):
    for x in range(6):
        assert max_cdf(poisson_one, 1, x) == pytest.approx(
            1 - math.exp(-poisson_one.log_tail(x + 1)), rel=1e-13)


def test_max_cdf_exact_rational(geo_half):
    assert max_cdf(geo_half, 4, 2) == pytest.approx(0.586181640625, rel=1e-14)


def test_max_cdf_astronomical_n(poisson_one):
    assert max_cdf(poisson_one, LogTime.from_log(math.log(1e30)), 5) < 1e-100
    # tiny n T(x + 1): survives without cancellation
    x = 40
    T = math.exp(-poisson_one.log_tail(x + 1))
    assert 1 - max_cdf(poisson_one, 1000, x) == pytest.approx(1000 * T, rel=1e-6) or T < 1e-300
    assert log_max_cdf(poisson_one, 10**6, 30) == pytest.approx(
        -(10**6) * math.exp(-poisson_one.log_tail(31)), rel=1e-10)


def test_max_cdf_vs_mpmath():
    d = Poisson(2.0)
    mp.mp.dps = 40
    for n in (3, 10**3, 10**8):
        for x in (0, 3, 8, 15):
            T = mp.mpf(1) - mp.fsum(mp.exp(-2) * mp.mpf(2)**i / mp.factorial(i) for i in range(x + 1))
            ref = (1 - T) ** n
            assert max_cdf(d, n, x) == pytest.approx(float(ref), rel=1e-10, abs=1e-300)


def test_max_cdf_vectorized(geo_half):
    xs = np.arange(-1, 12)
    out = max_cdf(geo_half, 100, xs)
    assert out[0] == 0.0
    assert np.all(np.diff(out) >= 0)
    assert out[-1] == pytest.approx((1 - 2.0**-12) ** 100)


def test_pmf_sums_to_one(poisson_one):
    for n in (1, 50, 10**6):
        xs = np.arange(0, 60)
        assert max_pmf(poisson_one, n, xs).sum() == pytest.approx(1.0, abs=1e-9)


def test_lower_examples(geo_half, poisson_one):
    assert hit_probability_exact(geo_half, 3, 0, "lower_at_most") == pytest.approx((15 / 16) ** 8,
                                                                                  rel=1e-13)
    assert hit_probability_exact(poisson_one, 4, 1, "lower_equal") == pytest.approx(
        0.350186038277126, rel=1e-12)
    assert hit_probability_exact(poisson_one, 2, 5, EventFamily.LOWER_EQUAL) == 0.0
    assert hit_probability_exact(poisson_one, 2, 5, EventFamily.LOWER_AT_MOST) == 0.0


def test_lower_equal_is_cdf_difference(poisson_one):
    k, l = 7, 1
    nk = block_start(poisson_one, k)
    want = max_cdf(poisson_one, nk, k - l) - max_cdf(poisson_one, nk, k - l - 1)
    assert hit_probability_exact(poisson_one, k, l, "lower_equal") == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("dist,kmax", [(Geometric(0.5), 18), (Poisson(1.0), 7), (Geometric(0.1), 60)])
def test_upper_closed_form_vs_bruteforce(dist, kmax):
    for k in range(1, kmax + 1):
        if block_start(dist, k + 1).exact > 10**6:
            break
        for l in range(-2, 4):
            h = upper_hit_probability(dist, k, l)
            brute = upper_probability_bruteforce(dist, k, l)
            assert h.p == pytest.approx(brute, abs=1e-10)
            assert h.lo - 1e-12 <= h.p <= h.hi + 1e-12


def test_upper_empty_block_is_zero():
    d = Geometric(0.1)
    assert block_start(d, 1) == block_start(d, 2)
    assert upper_hit_probability(d, 1, 0).p == 0.0


def test_upper_far_blocks_are_bracketed(poisson_one):
    for k in (20, 40, 60):
        h = upper_hit_probability(poisson_one, k, 1)
        assert 0.0 <= h.lo <= h.p <= h.hi <= 1.0


def test_bruteforce_budget(poisson_one):
    with pytest.raises(BudgetExceededError):
        upper_probability_bruteforce(poisson_one, 12, 0)


def test_ledger(poisson_one, tmp_path):
    led = expected_hits(poisson_one, 60, 2, "lower_equal")
    assert led.total == pytest.approx(0.057253800734557166, rel=1e-9)
    assert led.plateaued(1e-4)
    assert led.last_quartile_increment() < 1e-6
    grows = expected_hits(poisson_one, 60, 1, "lower_at_most")
    assert not grows.plateaued(1e-4)
    assert np.all(np.diff(grows.cumulative) >= 0)
    path = tmp_path / "ledger.csv"
    led.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "k,P_k,P_k_lo,P_k_hi,C_k" and len(lines) == 61


def test_ledger_zero_when_out_of_range(geo_half):
    led = expected_hits(geo_half, 5, 9, "lower_equal")
    assert led.total == 0.0 and np.all(led.p == 0)


def test_ledger_geometric_linear_growth(geo_half):
    led = expected_hits(geo_half, 100, 1, "lower_at_most")
    C = led.cumulative
    steps = np.diff(C[[24, 49, 74, 99]])
    assert np.allclose(steps, steps.mean(), rtol=1e-3)
    assert steps.mean() > 5


def test_direct_simulation(geo_half, poisson_one):
    rng = np.random.default_rng(1)
    assert direct_simulate_max(geo_half, 1, rng) >= 0
    draws = direct_simulate_max(geo_half, 1000, rng, size=100_000)
    p_hat = np.mean(draws <= 9)
    p = max_cdf(geo_half, 1000, 9)
    assert p == pytest.approx(0.376423798056724, rel=1e-12)
    assert abs(p_hat - p) < 3 * math.sqrt(p * (1 - p) / draws.size)
    m = direct_simulate_max(poisson_one, 100, rng, size=100_000)
    xs = np.arange(0, 15)
    mode = xs[np.argmax(max_pmf(poisson_one, 100, xs))]
    assert np.bincount(m).argmax() == mode
    with pytest.raises(BudgetExceededError):
        direct_simulate_max(geo_half, 10**8, rng)


def test_direct_single_draw_law(poisson_one):
    rng = np.random.default_rng(7)
    x = direct_simulate_max(poisson_one, 1, rng, size=200_000)
    p0 = math.exp(-1)
    assert abs(np.mean(x == 0) - p0) < 4 * math.sqrt(p0 * (1 - p0) / x.size)


# ---- property suites ----

@given(st.floats(0.1, 10.0), st.integers(1, 10**15), st.integers(0, 60))
def test_prop_max_cdf_monotone(lam, n, x):
    d = Poisson(lam)
    c = max_cdf(d, n, x)
    assert 0.0 <= c <= 1.0
    assert max_cdf(d, n, x + 1) >= c
    assert max_cdf(d, n + 1, x) <= c


@given(st.sampled_from([Poisson(1.0), Poisson(3.0), Geometric(0.5), Geometric(0.2)]),
       st.integers(1, 40), st.integers(-3, 3))
def test_prop_equal_implies_at_most(d, k, l):
    eq = hit_probability_exact(d, k, l, "lower_equal")
    le = hit_probability_exact(d, k, l, "lower_at_most")
    assert 0.0 <= eq <= le + 1e-15 <= 1.0 + 1e-15
    h = upper_hit_probability(d, k, l)
    assert 0.0 <= h.lo <= h.p + 1e-12 and h.p <= h.hi + 1e-12 and h.hi <= 1.0
