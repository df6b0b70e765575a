"""Discrete distributions on {0, 1, 2, ...} with exact log-tails.

Everything in the package is driven by the log-tail

    R(k) = -ln P(xi >= k),   r(k) = R(k) - R(k - 1),

from which the threshold sequence a_n (largest k with P(xi >= k) >= 1/n)
and the block boundaries n_k = ceil(exp(R(k))) follow. Times are handled
through :class:`LogTime` because n_k overflows every integer type for
fast-decaying tails.
"""

from __future__ import annotations

import json
import math
import os
import threading
from dataclasses import dataclass
from functools import total_ordering
from typing import Any, Mapping

import numpy as np

EXACT_LIMIT = 2**53
LOG_EXACT_LIMIT = math.log(EXACT_LIMIT)
# Block boundaries are kept as exact integers below this log value.
LOG_EXACT_BOUNDARY = LOG_EXACT_LIMIT - 2.0
# Relative slack for the tie T(k) == 1/n in the threshold definition.
TIE_RTOL = 1e-12
SERIES_RTOL = 1e-18
MAX_CACHE = 5_000_000


class TailOverflowError(OverflowError):
    """R(k) is not representable; use the asymptotic regime instead."""


def log_to_key(log_value):
    """Monotone sort key for a time given only by its logarithm.

    Below 2**53 the key is the (approximate) time itself so that it compares
    correctly against exact integer times; above, it is a linear rescaling of
    the log which keeps full double precision.
    """
    x = np.asarray(log_value, dtype=float)
    small = x < LOG_EXACT_LIMIT
    with np.errstate(over="ignore"):
        key = np.where(small, np.exp(np.minimum(x, LOG_EXACT_LIMIT)),
                       EXACT_LIMIT * (x / LOG_EXACT_LIMIT))
    return key if key.ndim else float(key)


@total_ordering
@dataclass(frozen=True, eq=False)
class LogTime:
    """A positive integer time, stored by its natural log.

    ``exact`` carries the integer itself while it is below 2**53; beyond that
    only ``log`` is meaningful (relative precision about 1e-16 of the log).
    """

    log: float
    exact: int | None = None

    @classmethod
    def from_int(cls, n: int) -> "LogTime":
        n = int(n)
        if n < 1:
            raise ValueError(f"time must be >= 1, got {n}")
        return cls(math.log(n), n if n < EXACT_LIMIT else None)

    @classmethod
    def from_log(cls, log_value: float) -> "LogTime":
        log_value = float(log_value)
        if not log_value >= 0.0:
            raise ValueError(f"log-time must be >= 0, got {log_value}")
        return cls(log_value, 1 if log_value == 0.0 else None)

    @property
    def key(self) -> float:
        if self.exact is not None:
            return float(self.exact)
        return log_to_key(self.log)

    def __eq__(self, other):
        if not isinstance(other, LogTime):
            return NotImplemented
        if self.exact is not None and other.exact is not None:
            return self.exact == other.exact
        return self.key == other.key

    def __lt__(self, other):
        if not isinstance(other, LogTime):
            return NotImplemented
        if self.exact is not None and other.exact is not None:
            return self.exact < other.exact
        return self.key < other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        if self.exact is not None:
            return f"LogTime({self.exact})"
        return f"LogTime(exp({self.log!r}))"


def as_log_time(n) -> float | np.ndarray:
    """Natural log of a time given as int, LogTime, float or array."""
    if isinstance(n, LogTime):
        return n.log
    if isinstance(n, (int, np.integer)):
        if n < 1:
            raise ValueError(f"time must be >= 1, got {n}")
        return math.log(int(n))
    if isinstance(n, (float, np.floating)):
        if not n >= 1:
            raise ValueError(f"time must be >= 1, got {n}")
        return math.log(n)
    arr = np.asarray(n)
    if arr.dtype == object:
        return np.array([as_log_time(v) for v in arr.ravel()]).reshape(arr.shape)
    arr = arr.astype(float)
    if np.any(~(arr >= 1)):
        raise ValueError("times must be >= 1")
    return np.log(arr)


class DiscreteDistribution:
    """Base class: a law on {0, 1, 2, ...} with p_i > 0 for every i.

    Subclasses implement ``_compute_log_tail``. Values of R are memoized in an
    append-only array; readers never lock, extension is serialized.
    """

    family = "abstract"

    def __init__(self):
        self._R = np.zeros(1)
        self._blocks: dict[int, LogTime] = {}
        self._lock = threading.Lock()

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def _compute_log_tail(self, k: int) -> float:
        raise NotImplementedError

    def _compute_log_tails(self, start: int, stop: int) -> np.ndarray:
        return np.array([self._compute_log_tail(k) for k in range(start, stop)])

    def spec(self) -> dict:
        raise NotImplementedError

    def log_tails(self, kmax: int) -> np.ndarray:
        """Array ``[R(0), ..., R(kmax)]`` (a read-only view of the cache)."""
        kmax = int(kmax)
        if kmax < 0:
            raise ValueError("kmax must be >= 0")
        R = self._R
        if kmax < len(R):
            return R[: kmax + 1]
        if kmax >= MAX_CACHE:
            raise TailOverflowError(
                f"{self!r}: k={kmax} exceeds the tabulated range ({MAX_CACHE})")
        with self._lock:
            R = self._R
            if kmax >= len(R):
                stop = min(max(kmax + 1, 2 * len(R), 64), MAX_CACHE)
                new = self._compute_log_tails(len(R), stop)
                if not np.all(np.isfinite(new)):
                    raise TailOverflowError(f"{self!r}: R(k) overflow below k={stop}")
                R = np.concatenate([R, new])
                R.setflags(write=False)
                self._R = R
        return R[: kmax + 1]

    def log_tails_covering(self, level: float) -> np.ndarray:
        """Cached R values extended until the last one exceeds ``level``."""
        R = self._R
        while R[-1] <= level:
            R = self.log_tails(2 * len(R))
        return self._R

    def log_tail(self, k: int) -> float:
        return float(self.log_tails(k)[k])

    def hazard(self, n: int) -> float:
        if n < 1:
            raise ValueError("hazard increment needs n >= 1")
        R = self.log_tails(n)
        return float(R[n] - R[n - 1])

    def log_pmf(self, i: int) -> float:
        """ln p_i from two consecutive log-tails, without cancellation."""
        R = self.log_tails(i + 1)
        return float(-R[i] + math.log(-math.expm1(-(R[i + 1] - R[i]))))

    def pmf(self, i: int) -> float:
        return math.exp(self.log_pmf(i))

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.spec().items() if k != "family")
        return f"{type(self).__name__}({args})"


class Poisson(DiscreteDistribution):
    family = "poisson"

    def __init__(self, lam: float):
        lam = float(lam)
        if not (lam > 0 and math.isfinite(lam)):
            raise ValueError(f"Poisson rate must be positive and finite, got {lam}")
        self.lam = lam
        self._log_lam = math.log(lam)
        super().__init__()

    def spec(self):
        return {"family": self.family, "lambda": self.lam}

    def _log_p(self, k: int) -> float:
        return k * self._log_lam - self.lam - math.lgamma(k + 1)

    def _compute_log_tail(self, k: int) -> float:
        if k == 0:
            return 0.0
        lam = self.lam
        s = term = 1.0
        if k > lam:
            # T(k) = p_k * (1 + lam/(k+1) + lam^2/((k+1)(k+2)) + ...)
            i = k
            while True:
                i += 1
                term *= lam / i
                s += term
                if term < SERIES_RTOL * s:
                    break
            return -(self._log_p(k) + math.log(s))
        # k <= lam: F(k-1) = p_{k-1} * (1 + (k-1)/lam + (k-1)(k-2)/lam^2 + ...)
        for i in range(k - 1, 0, -1):
            term *= i / lam
            s += term
            if term < SERIES_RTOL * s:
                break
        return -math.log1p(-math.exp(self._log_p(k - 1)) * s)


class Geometric(DiscreteDistribution):
    """P(xi = i) = q (1 - q)^i, so R(k) = gamma * k with gamma = -ln(1 - q)."""

    family = "geometric"

    def __init__(self, q: float):
        q = float(q)
        if not 0.0 < q < 1.0:
            raise ValueError(f"geometric parameter must lie in (0, 1), got {q}")
        self.q = q
        self.gamma = -math.log1p(-q)
        super().__init__()

    def spec(self):
        return {"family": self.family, "q": self.q}

    def _compute_log_tails(self, start, stop):
        return np.arange(start, stop, dtype=float) * self.gamma

    def _compute_log_tail(self, k):
        return k * self.gamma

    def hazard(self, n):
        if n < 1:
            raise ValueError("hazard increment needs n >= 1")
        return self.gamma


class PmfTable(DiscreteDistribution):
    """Explicit head probabilities p_0..p_{m-1} followed by a geometric tail.

    The mass left over after the table, M = 1 - sum(p), is spread as
    P(xi >= m + i) = M (1 - tail_rate)^i.
    """

    family = "pmf_table"

    def __init__(self, p, tail_rate: float):
        p = [float(v) for v in p]
        if any(not (v > 0 and math.isfinite(v)) for v in p):
            raise ValueError("table probabilities must be strictly positive")
        head = math.fsum(p)
        if not head < 1.0:
            raise ValueError(f"table probabilities must sum to < 1, got {head}")
        tail_rate = float(tail_rate)
        if not 0.0 < tail_rate < 1.0:
            raise ValueError("tail_rate must lie in (0, 1) so every p_i > 0")
        self.p = p
        self.tail_rate = tail_rate
        self._rest = 1.0 - head
        self._tail_gamma = -math.log1p(-tail_rate)
        self._cum = [0.0]
        for v in p:
            self._cum.append(self._cum[-1] + v)
        super().__init__()

    def spec(self):
        return {"family": self.family, "p": list(self.p), "tail_rate": self.tail_rate}

    def _compute_log_tail(self, k):
        m = len(self.p)
        if k == 0:
            return 0.0
        if k > m:
            return -math.log(self._rest) + (k - m) * self._tail_gamma
        head = math.fsum(self.p[:k])
        if head <= 0.5:
            return -math.log1p(-head)
        return -math.log(self._rest + math.fsum(self.p[k:]))


FAMILIES = {"poisson": Poisson, "geometric": Geometric, "pmf_table": PmfTable}


def from_spec(spec: Mapping[str, Any] | str) -> DiscreteDistribution:
    """Build a distribution from its JSON schema (dict, JSON text or file path).

    >>> from_spec({"family": "geometric", "q": 0.5})
    Geometric(q=0.5)
    """
    if isinstance(spec, str):
        text = spec
        if os.path.exists(spec):
            with open(spec) as fh:
                text = fh.read()
        spec = json.loads(text)
    if not isinstance(spec, Mapping):
        raise ValueError("distribution spec must be a JSON object")
    family = str(spec.get("family", "")).lower()
    try:
        if family == "poisson":
            return Poisson(spec["lambda"])
        if family == "geometric":
            return Geometric(spec["q"])
        if family == "pmf_table":
            return PmfTable(spec["p"], spec["tail_rate"])
    except KeyError as exc:
        raise ValueError(f"distribution spec for {family!r} is missing {exc}") from None
    raise ValueError(f"unknown distribution family {spec.get('family')!r}")


def log_tail(dist: DiscreteDistribution, k: int) -> float:
    """R(k) = -ln P(xi >= k); R(0) == 0 exactly."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return dist.log_tail(int(k))


def hazard_increment(dist: DiscreteDistribution, n: int) -> float:
    """r(n) = R(n) - R(n - 1) for n >= 1."""
    return dist.hazard(int(n))


def _reaches(log_n, R_k):
    # R(k) <= ln n, with ties T(k) == 1/n counted as reached.
    return R_k <= log_n + TIE_RTOL * np.maximum(1.0, log_n)


def threshold_sequence(dist: DiscreteDistribution, n):
    """a_n = max{k >= 0 : P(xi >= k) >= 1/n}.

    ``n`` may be an int (any size), a :class:`LogTime`, or an array of
    times; arrays are answered with one vectorized search.
    """
    log_n = as_log_time(n)
    scalar = np.ndim(log_n) == 0
    log_n = np.atleast_1d(np.asarray(log_n, dtype=float))
    bound = log_n + TIE_RTOL * np.maximum(1.0, log_n)
    R = dist.log_tails_covering(float(bound.max()))
    a = np.searchsorted(R, bound, side="right") - 1
    return int(a[0]) if scalar else a


def block_start(dist: DiscreteDistribution, k: int) -> LogTime:
    """n_k = ceil(exp(R(k))), the first time with a_n >= k, as a LogTime.

    Block I_k = [n_k, n_{k+1}) is empty when no integer fits between
    exp(R(k)) and exp(R(k+1)); otherwise a_n = k exactly on it.
    """
    if k < 1:
        raise ValueError("blocks are indexed from k = 1")
    k = int(k)
    cached = dist._blocks.get(k)
    if cached is not None:
        return cached
    R_k = dist.log_tail(k)
    if R_k >= LOG_EXACT_BOUNDARY:
        result = LogTime.from_log(R_k)
    else:
        # bisect for the smallest c with _reaches(ln c, R_k)
        guess = math.exp(R_k)
        lo = max(0, math.floor(guess * (1.0 - 1e-10 * max(1.0, R_k))) - 2)
        hi = math.ceil(guess * (1.0 + 1e-10)) + 2
        while lo > 0 and _reaches(math.log(lo), R_k):
            lo //= 2
        while not _reaches(math.log(hi), R_k):
            hi *= 2
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if _reaches(math.log(mid), R_k):
                hi = mid
            else:
                lo = mid
        result = LogTime.from_int(hi)
    dist._blocks[k] = result
    return result


def block_starts(dist: DiscreteDistribution, kmax: int) -> list[LogTime]:
    """[n_1, ..., n_kmax]."""
    return [block_start(dist, k) for k in range(1, kmax + 1)]


def iterated_log(j: int, x) -> float:
    """L_j(x): the j-fold natural logarithm. ``x`` may be a LogTime."""
    if j < 1:
        raise ValueError("j must be >= 1")
    if isinstance(x, LogTime):
        value = x.log
    else:
        if not x > 0:
            raise ValueError(f"log of non-positive value {x}")
        value = math.log(x)
    for _ in range(j - 1):
        if not value > 0:
            raise ValueError(f"iterated log undefined: intermediate value {value} <= 0")
        value = math.log(value)
    return value


def tail_index(dist: DiscreteDistribution, level):
    """Smallest j with R(j) >= level (vectorized over ``level``).

    This is the inversion primitive: for E ~ Exp(1), ``tail_index(E) - 1`` is
    distributed as xi, and ``tail_index(R(m + 1) + E) - 1`` as xi given xi > m.
    """
    level = np.asarray(level, dtype=float)
    top = float(level.max()) if level.size else 0.0
    R = dist.log_tails_covering(top)
    return np.searchsorted(R, level, side="left")
