"""Closed-form and brute-force reference computations.

The law of the running maximum is explicit, P(M_n <= x) = (1 - T(x + 1))^n,
so every block event used by the simulator has an exact probability. These
functions are the references the statistical checks compare against.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .dist_core import (
    DiscreteDistribution,
    LogTime,
    as_log_time,
    block_start,
    tail_index,
)

LN2 = math.log(2.0)
DIRECT_BUDGET = 10**7


class EventFamily(str, enum.Enum):
    """Block events for block I_k = [n_k, n_{k+1}) and offset l."""

    UPPER = "upper"                  # some n in I_k has M_n = k + l
    LOWER_AT_MOST = "lower_at_most"  # M_{n_k} <= k - l
    LOWER_EQUAL = "lower_equal"      # M_{n_k} == k - l


class BudgetExceededError(ValueError):
    pass


def _log_one_minus_exp_neg(R):
    """ln(1 - e^{-R}) for R >= 0 without cancellation; -inf at R == 0."""
    R = np.asarray(R, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(R < LN2,
                       np.log(-np.expm1(-np.minimum(R, LN2))),
                       np.log1p(-np.exp(-np.maximum(R, LN2))))
    return out


def _log_neg_log_cdf(R):
    """ln(-ln(1 - e^{-R})): the log of the per-draw miss rate."""
    R = np.asarray(R, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        big = R > 700.0
        mid = np.log(-_log_one_minus_exp_neg(np.where(big, 1.0, R)))
        # -ln(1 - T) = T (1 + T/2 + ...), T = e^{-R} below double resolution
        return np.where(big, -R, mid)


def log_max_cdf(dist: DiscreteDistribution, n, x):
    """ln P(M_n <= x), vectorized over ``x``; ``n`` is an int or LogTime."""
    log_n = as_log_time(n)
    x = np.asarray(x)
    xi = np.asarray(x, dtype=np.int64)
    safe = np.maximum(xi, -1)
    R = dist.log_tails(int(safe.max()) + 1 if safe.size else 0)
    R_next = R[safe + 1]
    with np.errstate(over="ignore"):
        out = -np.exp(log_n + _log_neg_log_cdf(R_next))
    out = np.where(xi < 0, -np.inf, out)
    return out if out.ndim else float(out)


def max_cdf(dist: DiscreteDistribution, n, x):
    """P(M_n <= x) = (1 - exp(-R(x + 1)))^n, stable for astronomically large n."""
    return np.exp(log_max_cdf(dist, n, x))


def max_pmf(dist: DiscreteDistribution, n, x):
    """P(M_n == x) as F^n(x) (1 - (F(x-1)/F(x))^n), free of cancellation."""
    x = np.asarray(x, dtype=np.int64)
    a = np.asarray(log_max_cdf(dist, n, x))
    b = np.asarray(log_max_cdf(dist, n, x - 1))
    with np.errstate(invalid="ignore"):
        out = np.exp(a) * -np.expm1(b - a)
    out = np.where(np.isneginf(a), 0.0, out)
    return out if out.ndim else float(out)


def _log_count_between(lo: LogTime, hi: LogTime) -> float:
    """ln(hi - lo - 1), the number of times strictly inside (lo, hi); -inf if none."""
    if lo.exact is not None and hi.exact is not None:
        count = hi.exact - lo.exact - 1
        return math.log(count) if count > 0 else -math.inf
    # 1/hi is far below double resolution once hi exceeds 2**53
    ratio = math.exp(lo.log - hi.log)
    return hi.log + math.log1p(-ratio) if ratio < 1.0 else -math.inf


@dataclass(frozen=True)
class HitProbability:
    """Exact block-event probability with a rigorous bracket around it."""

    p: float
    lo: float
    hi: float


def upper_hit_probability(dist: DiscreteDistribution, k: int, l: int) -> HitProbability:
    """P(some n in I_k has M_n = k + l), exactly.

    With v = k + l, A = n_k and N = n_{k+1} - n_k - 1 further draws in the
    block, the level v is visited either because M_A = v already, or because
    M_A < v and the first of the N later draws reaching v lands exactly on v:

        P = [F(v)^A - F(v-1)^A] + F(v-1)^A * p_v / T(v) * (1 - F(v-1)^N).

    The bracket is [max(P(M_A = v), P(M_{B-1} = v)), P(M_A <= v <= M_{B-1})].
    """
    v = k + l
    if v < 0:
        return HitProbability(0.0, 0.0, 0.0)
    A = block_start(dist, k)
    B = block_start(dist, k + 1)
    if not A < B:
        return HitProbability(0.0, 0.0, 0.0)   # empty block
    log_last = math.log(B.exact - 1) if B.exact is not None else B.log
    R = dist.log_tails(v + 1)
    at_v = float(max_pmf(dist, A, v))
    log_below_A = float(log_max_cdf(dist, A, v - 1))
    # p_v / T(v) = 1 - exp(-r(v + 1))
    land = -math.expm1(-(R[v + 1] - R[v]))
    log_N = _log_count_between(A, B)
    if math.isinf(log_N) or v == 0:
        jump = 0.0
    else:
        miss_rate = float(_log_neg_log_cdf(R[v]))
        stay_below = -math.exp(log_N + miss_rate)
        jump = math.exp(log_below_A) * land * -math.expm1(stay_below)
    p = at_v + jump
    last = LogTime(log_last, B.exact - 1 if B.exact is not None else None)
    lo = max(at_v, float(max_pmf(dist, last, v)))
    hi = float(max_cdf(dist, A, v)) - float(max_cdf(dist, last, v - 1))
    return HitProbability(min(p, 1.0), lo, max(hi, lo))


def hit_probability_exact(dist: DiscreteDistribution, k: int, l: int,
                          family: EventFamily | str) -> float:
    """Exact probability of a block event at block k and offset l."""
    family = EventFamily(family)
    if family is EventFamily.UPPER:
        return upper_hit_probability(dist, k, l).p
    x = k - l
    if x < 0:
        return 0.0
    n_k = block_start(dist, k)
    if family is EventFamily.LOWER_AT_MOST:
        return float(max_cdf(dist, n_k, x))
    return float(max_pmf(dist, n_k, x))


def upper_probability_bruteforce(dist: DiscreteDistribution, k: int, l: int,
                                 limit: int = 10**6) -> float:
    """P(some n in I_k has M_n = k + l) by stepping a 3-state chain through time.

    States: M below v, M equal to v, M above v; the mass sitting at v at any
    time inside the block is moved to an absorbing "visited" state.
    """
    v = k + l
    if v < 0:
        return 0.0
    A, B = block_start(dist, k), block_start(dist, k + 1)
    if B.exact is None or B.exact > limit:
        raise BudgetExceededError(f"block {k} is too long for brute force")
    if B.exact <= A.exact:
        return 0.0
    T_v = math.exp(-dist.log_tail(v))
    T_v1 = math.exp(-dist.log_tail(v + 1))
    f_below, p_v, f_above = 1.0 - T_v, T_v - T_v1, T_v1
    below, equal, visited = 1.0, 0.0, 0.0
    for n in range(1, B.exact):
        below, equal = below * f_below, below * p_v + equal * (1.0 - f_above)
        if n >= A.exact:
            visited += equal
            equal = 0.0
    return visited


@dataclass
class ExpectedHitsLedger:
    """Per-block exact probabilities P_k and their running sums C_k."""

    family: EventFamily
    l: int
    k: np.ndarray
    p: np.ndarray
    p_lo: np.ndarray
    p_hi: np.ndarray
    cumulative: np.ndarray = field(init=False)

    def __post_init__(self):
        self.cumulative = np.cumsum(self.p)

    @property
    def total(self) -> float:
        return float(self.cumulative[-1]) if len(self.cumulative) else 0.0

    def variance_bound(self) -> float:
        """Sum of P_k (1 - P_k): the variance if block events were independent."""
        return float(np.sum(self.p * (1.0 - self.p)))

    def last_quartile_increment(self) -> float:
        K = len(self.p)
        start = K - max(1, K // 4)
        return float(np.sum(self.p[start:]))

    def plateaued(self, rtol: float = 1e-4) -> bool:
        """Increments over the last quarter of blocks are below rtol * C_K."""
        return self.last_quartile_increment() < rtol * max(self.total, np.finfo(float).tiny)

    def rows(self):
        for i in range(len(self.k)):
            yield {"k": int(self.k[i]), "P_k": float(self.p[i]),
                   "P_k_lo": float(self.p_lo[i]), "P_k_hi": float(self.p_hi[i]),
                   "C_k": float(self.cumulative[i])}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["k", "P_k", "P_k_lo", "P_k_hi", "C_k"],
                                    lineterminator="\n")
            writer.writeheader()
            for row in self.rows():
                writer.writerow({key: (repr(val) if isinstance(val, float) else val)
                                 for key, val in row.items()})


def expected_hits(dist: DiscreteDistribution, K: int, l: int,
                  family: EventFamily | str) -> ExpectedHitsLedger:
    """Exact expected number of blocks k <= K where the event occurs."""
    family = EventFamily(family)
    ks = np.arange(1, K + 1)
    if family is EventFamily.UPPER:
        probs = [upper_hit_probability(dist, int(k), l) for k in ks]
        p = np.array([h.p for h in probs])
        lo = np.array([h.lo for h in probs])
        hi = np.array([h.hi for h in probs])
    else:
        p = np.array([hit_probability_exact(dist, int(k), l, family) for k in ks])
        lo = hi = p
    return ExpectedHitsLedger(family, l, ks, p, lo.copy(), hi.copy())


def direct_simulate_max(dist: DiscreteDistribution, n: int, rng: np.random.Generator,
                        size: int | None = None):
    """Maximum of n i.i.d. draws, each generated by inversion of the cdf.

    Inversion is monotone, so the maximum of the inverted uniforms is the
    inversion of the maximum uniform; only that one is mapped back. ``size``
    gives independent replicates.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > DIRECT_BUDGET:
        raise BudgetExceededError(f"n={n} exceeds the direct-simulation budget {DIRECT_BUDGET}")
    reps = 1 if size is None else int(size)
    rows = max(1, DIRECT_BUDGET // n)
    top = np.empty(reps)
    for start in range(0, reps, rows):
        stop = min(reps, start + rows)
        top[start:stop] = rng.random((stop - start, n)).max(axis=1)
    # xi = min{i : F(i) >= U} = min{i : R(i + 1) >= -ln(1 - U)}
    values = np.maximum(tail_index(dist, -np.log1p(-top)) - 1, 0)
    return int(values[0]) if size is None else values
