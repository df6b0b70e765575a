"""Jump-chain simulation of the running maximum M_n = max(xi_1, ..., xi_n).

Only the record skeleton of M is simulated: from a current maximum m the
waiting time to the next strict increase is geometric with success
probability T(m + 1), and the new maximum is xi conditioned on xi > m. Every
block event depends on this skeleton alone, so horizons like exp(R(K + 1))
(about e^190 for Poisson(1) and K = 60) cost O(number of records).

Paths are simulated in vectorized groups of ``PATH_BLOCK``. Group g of seed s
draws from its own Philox stream ``SeedSequence(s, spawn_key=(g,))`` and each
step consumes a fixed ``(2, PATH_BLOCK)`` array of uniforms, column i feeding
path ``g * PATH_BLOCK + i``. A path's randomness therefore depends only on
(seed, path index), not on how many paths are run or on which worker.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dist_core import (
    EXACT_LIMIT,
    DiscreteDistribution,
    LogTime,
    block_start,
    log_to_key,
    tail_index,
)
from .oracle import EventFamily, hit_probability_exact

PATH_BLOCK = 1024
# Below this success probability the geometric wait is replaced by E / q
# when the time has left the exact integer range (relative error <= q).
SMALL_Q = 1e-8


def path_generator(seed: int, group: int) -> np.random.Generator:
    """Counter-based generator for path group ``group`` of ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(group,))))


def _waiting(e, R_next, t_int, exact):
    """Vectorized geometric waiting time with success probability exp(-R_next).

    ``e`` is -ln U. Returns (new exact time or -1, ln W) where the first is
    filled wherever the sum stays an exact integer below 2**53.
    """
    q = np.exp(-R_next)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        rate = -np.log1p(-q)                     # -ln(1 - q), inf when q == 1
        w = np.where(np.isinf(rate), 0.0, e / rate)
    W = np.maximum(1.0, np.ceil(w))
    fits = exact & (t_int + W < EXACT_LIMIT - 1)
    new_int = np.where(fits, t_int + np.where(fits, W, 0).astype(np.int64), -1)
    with np.errstate(divide="ignore"):
        log_W = np.where(q >= SMALL_Q, np.log(W), R_next + np.log(e))
    return new_int, np.maximum(log_W, 0.0)


def waiting_from_uniform(u: float, log_q: float) -> LogTime:
    """W = ceil(ln U / ln(1 - q)) for q = exp(log_q); log-domain once W >= 2**53."""
    if not 0.0 < u < 1.0:
        raise ValueError("u must lie in (0, 1)")
    if log_q > 0:
        raise ValueError("log_q must be <= 0")
    new_int, log_W = _waiting(np.array([-math.log(u)]), np.array([-log_q]),
                              np.zeros(1, np.int64), np.ones(1, bool))
    if new_int[0] > 0:
        return LogTime.from_int(int(new_int[0]))
    return LogTime.from_log(float(log_W[0]))


def sample_record_waiting(rng: np.random.Generator, log_q: float) -> LogTime:
    """Waiting time until the first draw exceeding the current maximum."""
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return waiting_from_uniform(u, log_q)


def conditional_value_from_uniform(dist: DiscreteDistribution, u, m: int):
    """min{i > m : (T(m+1) - T(i+1)) / T(m+1) >= u}, by inversion in log domain."""
    u = np.asarray(u, dtype=float)
    base = dist.log_tail(m + 1) if m >= 0 else 0.0
    v = np.maximum(tail_index(dist, base - np.log1p(-u)) - 1, m + 1)
    return int(v) if v.ndim == 0 else v


def sample_conditional_value(dist: DiscreteDistribution, rng: np.random.Generator,
                             m: int) -> int:
    """A draw of xi given xi > m (m = -1: unconditional)."""
    if m < -1:
        raise ValueError("m must be >= -1")
    return conditional_value_from_uniform(dist, rng.random(), m)


@dataclass
class RecordPath:
    """Record times and values of one running-maximum path.

    ``log_times`` are natural logs of the record times, ``exact_times`` the
    integers themselves (-1 once beyond 2**53) and ``keys`` the sort keys used
    for all comparisons (see :func:`discmax.dist_core.log_to_key`).
    """

    values: np.ndarray
    log_times: np.ndarray
    exact_times: np.ndarray
    horizon: LogTime
    keys: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        self.log_times = np.asarray(self.log_times, dtype=float)
        self.exact_times = np.asarray(self.exact_times, dtype=np.int64)
        self.keys = np.where(self.exact_times > 0, self.exact_times.astype(float),
                             log_to_key(self.log_times))

    @classmethod
    def from_records(cls, records, horizon) -> "RecordPath":
        """Build from ``[(time, value), ...]`` with int or LogTime times."""
        times = [t if isinstance(t, LogTime) else LogTime.from_int(t) for t, _ in records]
        horizon = horizon if isinstance(horizon, LogTime) else LogTime.from_int(horizon)
        return cls([v for _, v in records], [t.log for t in times],
                   [t.exact if t.exact is not None else -1 for t in times], horizon)

    @classmethod
    def from_sequence(cls, xs) -> "RecordPath":
        """Record skeleton of an explicit sequence xi_1, xi_2, ..."""
        xs = np.asarray(xs)
        running = np.maximum.accumulate(xs)
        new = np.ones(len(xs), bool)
        new[1:] = running[1:] > running[:-1]
        times = np.flatnonzero(new) + 1
        return cls(running[new], np.log(times), times, LogTime.from_int(len(xs)))

    @property
    def records(self) -> list[tuple[LogTime, int]]:
        out = []
        for lg, ex, v in zip(self.log_times, self.exact_times, self.values):
            t = LogTime(float(lg), int(ex)) if ex > 0 else LogTime(float(lg))
            out.append((t, int(v)))
        return out

    def __len__(self):
        return len(self.values)

    def value_at(self, t) -> int:
        """M_t for 1 <= t <= horizon."""
        key = (t if isinstance(t, LogTime) else LogTime.from_int(t)).key
        idx = np.searchsorted(self.keys, key, side="right") - 1
        if idx < 0:
            raise ValueError("time precedes the first record")
        return int(self.values[idx])

    def expand(self, n_max: int) -> np.ndarray:
        """M_1..M_{n_max} as an array (small horizons only)."""
        if np.any((self.exact_times <= 0) & (self.keys <= n_max)):
            raise ValueError("path has non-exact record times")
        idx = np.searchsorted(self.keys, np.arange(1, n_max + 1), side="right") - 1
        return self.values[idx]


def _simulate_group(dist, horizon: LogTime, rng, width: int, n_paths: int,
                    keep_records: bool = True):
    """Run ``n_paths`` jump chains, the first columns of a ``width``-wide draw."""
    m = np.full(n_paths, -1, np.int64)
    t_int = np.zeros(n_paths, np.int64)
    t_log = np.full(n_paths, -np.inf)
    exact = np.ones(n_paths, bool)
    active = np.ones(n_paths, bool)
    h_key = horizon.key
    steps = []
    while active.any():
        u = rng.random((2, width))[:, :n_paths]
        idx = np.flatnonzero(active)
        e_wait = -np.log1p(-u[0, idx])
        e_val = -np.log1p(-u[1, idx])
        mi = m[idx]
        R = dist.log_tails(int(mi.max()) + 1)
        R_next = R[mi + 1]
        new_int, log_W = _waiting(e_wait, R_next, t_int[idx], exact[idx])
        still_exact = new_int > 0
        with np.errstate(divide="ignore"):
            base = np.where(exact[idx], np.log(np.maximum(t_int[idx], 1)), t_log[idx])
        new_log = np.where(still_exact, np.log(np.maximum(new_int, 1)),
                           np.logaddexp(base, log_W))
        if horizon.exact is not None:
            beyond = np.where(still_exact, new_int > horizon.exact,
                              log_to_key(new_log) > h_key)
        else:
            beyond = np.where(still_exact, False, log_to_key(new_log) > h_key)
        active[idx[beyond]] = False
        keep = ~beyond
        idx, mi = idx[keep], mi[keep]
        if idx.size == 0:
            continue
        v = np.maximum(tail_index(dist, R_next[keep] + e_val[keep]) - 1, mi + 1)
        m[idx] = v
        exact[idx] = still_exact[keep]
        t_int[idx] = np.where(still_exact[keep], new_int[keep], -1)
        t_log[idx] = new_log[keep]
        if keep_records:
            steps.append((idx, t_int[idx].copy(), new_log[keep], v))
    if not keep_records:
        return m
    if not steps:
        return [RecordPath([], [], [], horizon) for _ in range(n_paths)]
    who = np.concatenate([s[0] for s in steps])
    order = np.argsort(who, kind="stable")
    who = who[order]
    ex = np.concatenate([s[1] for s in steps])[order]
    lg = np.concatenate([s[2] for s in steps])[order]
    val = np.concatenate([s[3] for s in steps])[order]
    cuts = np.searchsorted(who, np.arange(1, n_paths))
    return [RecordPath(v_, l_, e_, horizon)
            for v_, l_, e_ in zip(np.split(val, cuts), np.split(lg, cuts), np.split(ex, cuts))]


def simulate_record_path(dist: DiscreteDistribution, K: int,
                         rng: np.random.Generator, horizon: LogTime | None = None) -> RecordPath:
    """One jump-chain path up to n_{K+1} (or an explicit ``horizon``)."""
    if horizon is None:
        horizon = block_start(dist, K + 1)
    return _simulate_group(dist, horizon, rng, 1, 1)[0]


def simulate_paths(dist: DiscreteDistribution, horizon: LogTime, paths: int, seed: int,
                   first_path: int = 0) -> list[RecordPath]:
    """Paths ``first_path .. first_path + paths - 1`` of ``seed``.

    ``first_path`` must be a multiple of PATH_BLOCK.
    """
    if first_path % PATH_BLOCK:
        raise ValueError("first_path must be aligned to PATH_BLOCK")
    out = []
    for start in range(0, paths, PATH_BLOCK):
        group = (first_path + start) // PATH_BLOCK
        n = min(PATH_BLOCK, paths - start)
        out.extend(_simulate_group(dist, horizon, path_generator(seed, group), PATH_BLOCK, n))
    return out


def sample_max_at(dist: DiscreteDistribution, n, size: int, seed: int) -> np.ndarray:
    """``size`` independent jump-chain draws of M_n."""
    horizon = n if isinstance(n, LogTime) else LogTime.from_int(n)
    out = np.empty(size, np.int64)
    for start in range(0, size, PATH_BLOCK):
        w = min(PATH_BLOCK, size - start)
        out[start:start + w] = _simulate_group(dist, horizon, path_generator(seed, start // PATH_BLOCK),
                                               PATH_BLOCK, w, keep_records=False)
    return out


def boundary_keys(dist: DiscreteDistribution, K: int) -> np.ndarray:
    """Sort keys of n_1, ..., n_{K+1} (index 0 is n_1)."""
    return np.array([block_start(dist, k).key for k in range(1, K + 2)])


def _path_hits(path: RecordPath, bkeys: np.ndarray, ks: np.ndarray, offsets: np.ndarray):
    """(upper, lower_at_most, lower_equal) boolean arrays of shape (len(ks), len(offsets)).

    ``bkeys[i]`` is the key of the start of block ``ks[i]`` and ``bkeys[i + 1]``
    the key of its end.
    """
    start = bkeys[:-1][:, None]
    stop = bkeys[1:][:, None]
    values, keys = path.values, path.keys
    n = len(values)
    level = ks[:, None] + offsets[None, :]
    i = np.searchsorted(values, level)
    ic = np.minimum(i, n - 1)
    found = (i < n) & (values[ic] == level)
    ends = np.append(keys[1:], np.inf)
    upper = found & (start < stop) & (keys[ic] < stop) & (ends[ic] > start)
    at_start = values[np.searchsorted(keys, start[:, 0], side="right") - 1][:, None]
    lower_target = ks[:, None] - offsets[None, :]
    return upper, at_start <= lower_target, at_start == lower_target


def block_hits(path: RecordPath, dist: DiscreteDistribution, k: int, l: int):
    """Block events of one path at block k and offset l.

    Returns (upper, lower_at_most, lower_equal):
    upper: M_n = k + l for some n in I_k = [n_k, n_{k+1});
    lower_at_most: M_{n_k} <= k - l (equivalently M_n <= k - l somewhere in
    I_k, since M is nondecreasing); lower_equal: M_{n_k} = k - l.
    """
    if k < 1:
        raise ValueError("blocks start at k = 1")
    stop = block_start(dist, k + 1)
    h = path.horizon
    # the block needs times up to n_{k+1} - 1
    beyond = stop.exact - 1 > h.exact if stop.exact is not None and h.exact is not None \
        else stop.key > h.key
    if beyond:
        raise ValueError(f"block {k} extends beyond the path horizon")
    bkeys = np.array([block_start(dist, k).key, stop.key])
    up, le, eq = _path_hits(path, bkeys, np.array([k]), np.array([l]))
    return bool(up[0, 0]), bool(le[0, 0]), bool(eq[0, 0])


@dataclass
class SimConfig:
    K: int
    paths: int
    seed: int = 0
    offsets: tuple[int, int] = (-2, 3)   # inclusive integer interval
    workers: int = 1

    def __post_init__(self):
        if self.K < 1 or self.paths < 1:
            raise ValueError("K and paths must be >= 1")
        lo, hi = self.offsets
        if lo > hi:
            raise ValueError("empty offset interval")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def offset_values(self) -> np.ndarray:
        return np.arange(self.offsets[0], self.offsets[1] + 1)


FAMILIES = (EventFamily.UPPER, EventFamily.LOWER_AT_MOST, EventFamily.LOWER_EQUAL)


@dataclass
class BlockHitMatrix:
    """Per-path, per-block, per-offset indicators for the three event families.

    ``hits[family]`` has shape (paths, K, len(offsets)); ``exact[family]`` has
    shape (K, len(offsets)) and holds the oracle probability of each cell.
    """

    dist_spec: dict
    K: int
    seed: int
    offsets: np.ndarray
    hits: dict
    exact: dict

    @property
    def paths(self) -> int:
        return self.hits[EventFamily.UPPER].shape[0]

    def column(self, l: int) -> int:
        where = np.flatnonzero(self.offsets == l)
        if where.size == 0:
            raise KeyError(f"offset {l} was not simulated")
        return int(where[0])

    def totals(self, family, l: int) -> np.ndarray:
        """Number of blocks with a hit, per path."""
        return self.hits[EventFamily(family)][:, :, self.column(l)].sum(axis=1)

    def hit_rates(self, family) -> np.ndarray:
        return self.hits[EventFamily(family)].mean(axis=0)

    def lower_equal_anywhere(self, l: int) -> np.ndarray:
        """M_n = k - l for some n in I_k: this is the Upper event at offset -l."""
        return self.hits[EventFamily.UPPER][:, :, self.column(-l)]

    def to_csv(self, path) -> None:
        """Long format, one row per cell: path, k, event, l, hit."""
        grid = np.indices((self.paths, self.K, len(self.offsets))).reshape(3, -1)
        ls = np.asarray(self.offsets)[grid[2]]
        with open(path, "w", newline="") as fh:
            fh.write("path,k,event,l,hit\n")
            for fam in FAMILIES:
                table = np.column_stack([grid[0], grid[1] + 1, ls, self.hits[fam].reshape(-1)])
                np.savetxt(fh, table, fmt=f"%d,%d,{fam.value},%d,%d")

    def summary(self) -> dict:
        """JSON-ready per-block rates, exact probabilities and per-path total stats."""
        events = {}
        for fam in FAMILIES:
            rates = self.hit_rates(fam)
            for j, l in enumerate(self.offsets):
                totals = self.totals(fam, int(l))
                events[f"{fam.value}:{int(l)}"] = {
                    "family": fam.value,
                    "l": int(l),
                    "hit_rate": [float(x) for x in rates[:, j]],
                    "exact": [float(x) for x in self.exact[fam][:, j]],
                    "mean_total": float(totals.mean()),
                    "sd_total": float(totals.std(ddof=1)) if self.paths > 1 else 0.0,
                    "expected_total": float(self.exact[fam][:, j].sum()),
                    "paths_with_late_hits": float(
                        self.hits[fam][:, self.K - self.K // 3:, j].any(axis=1).mean()),
                }
        return {"dist": self.dist_spec, "K": self.K, "paths": self.paths,
                "seed": self.seed, "offsets": [int(l) for l in self.offsets],
                "events": events}


def _ensemble_group(args):
    dist, horizon, seed, group, n, bkeys, ks, offsets = args
    paths = _simulate_group(dist, horizon, path_generator(seed, group), PATH_BLOCK, n)
    shape = (n, len(ks), len(offsets))
    out = [np.zeros(shape, bool) for _ in FAMILIES]
    for p, path in enumerate(paths):
        for arr, res in zip(out, _path_hits(path, bkeys, ks, offsets)):
            arr[p] = res
    return group, out


def exact_probabilities(dist: DiscreteDistribution, K: int, offsets) -> dict:
    """Oracle probability of every (family, k, l) cell, memoized per distribution."""
    key = (K, tuple(int(l) for l in offsets))
    cache = dist.__dict__.setdefault("_exact_cache", {})
    if key not in cache:
        cache[key] = {fam: np.array([[hit_probability_exact(dist, k, int(l), fam) for l in offsets]
                                     for k in range(1, K + 1)])
                      for fam in FAMILIES}
    return {fam: arr.copy() for fam, arr in cache[key].items()}


def run_ensemble(dist: DiscreteDistribution, config: SimConfig) -> BlockHitMatrix:
    """Simulate ``config.paths`` paths to n_{K+1} and record every block event."""
    K, offsets = config.K, config.offset_values
    horizon = block_start(dist, K + 1)
    bkeys = boundary_keys(dist, K)
    ks = np.arange(1, K + 1)
    jobs = []
    for start in range(0, config.paths, PATH_BLOCK):
        n = min(PATH_BLOCK, config.paths - start)
        jobs.append((dist, horizon, config.seed, start // PATH_BLOCK, n, bkeys, ks, offsets))
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = dict(pool.map(_ensemble_group, jobs))
    else:
        results = dict(map(_ensemble_group, jobs))
    hits = {fam: np.concatenate([results[g][i] for g in sorted(results)])
            for i, fam in enumerate(FAMILIES)}
    return BlockHitMatrix(dist.spec(), K, config.seed, offsets, hits,
                          exact_probabilities(dist, K, offsets))
