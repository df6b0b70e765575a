"""Symbolic classification of the almost-sure behaviour of M_n - a_n.

The input is a declared asymptotic regime for the hazard increments r(k).
Convergence of the two criterion series

    sum_k exp(-j r(k))          (PlainExp, decides M_n = a_n + l i.o.)
    sum_k exp(-exp(j r(k)))     (DoubleExp, decides M_n <= a_n - l i.o.)

is read off the regime by comparison tests; nothing here is numeric except
the diagnostic partial sums and the advisory regime fit.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .dist_core import DiscreteDistribution, Geometric, PmfTable, Poisson

INF = math.inf


class RegimeKind(str, enum.Enum):
    BOUNDED = "bounded"        # r(n) <= C0
    SUBLOG2 = "sublog2"        # r(n) = chi(n) L2(n) -> inf, chi -> 0
    LOG2LINEAR = "log2linear"  # r(n) = (c + o(1)) L2(n)
    LOGLINEAR = "loglinear"    # r(n) = c L(n) + O(1)
    SUPERLOG = "superlog"      # r(n) / L(n) -> inf


class Series(str, enum.Enum):
    PLAIN_EXP = "plain_exp"    # sum exp(-j r(k))
    DOUBLE_EXP = "double_exp"  # sum exp(-exp(j r(k)))


class Decision(str, enum.Enum):
    CONVERGES = "converges"
    DIVERGES = "diverges"
    UNDECIDABLE = "undecidable"


class Verdict(str, enum.Enum):
    IO = "a.s. infinitely often"
    FINITELY_OFTEN = "a.s. finitely often"
    UNDECIDED = "undecided"


class Mode(str, enum.Enum):
    AT_MOST = "at_most"   # M_n <= a_n - l
    EQUAL = "equal"       # M_n == a_n - l


class PreconditionError(ValueError):
    """The regime lacks a hypothesis the requested result needs."""


@dataclass(frozen=True)
class SeriesKind:
    kind: Series
    j: int

    def __post_init__(self):
        object.__setattr__(self, "kind", Series(self.kind))
        if self.j < 0:
            raise ValueError("j must be >= 0")

    def __str__(self):
        if self.kind is Series.PLAIN_EXP:
            return f"sum exp(-{self.j} r(k))"
        return f"sum exp(-exp({self.j} r(k)))"


def plain(j: int) -> SeriesKind:
    return SeriesKind(Series.PLAIN_EXP, j)


def double(j: int) -> SeriesKind:
    return SeriesKind(Series.DOUBLE_EXP, j)


_NEEDS_C = {RegimeKind.BOUNDED, RegimeKind.LOG2LINEAR, RegimeKind.LOGLINEAR}
# kinds whose growth forces r(n)/n -> 0
_SLOW = {RegimeKind.BOUNDED, RegimeKind.SUBLOG2, RegimeKind.LOG2LINEAR, RegimeKind.LOGLINEAR}


@dataclass(frozen=True)
class RateRegime:
    """Asymptotic description of r(k).

    ``c`` is the bound C0 for BOUNDED and the constant c for the two linear
    kinds. ``fitted`` marks regimes estimated from finitely many r(k).
    """

    kind: RegimeKind
    c: float | None = None
    monotone: bool = True
    r_over_n_to_zero: bool | None = None
    fitted: bool = False
    source: str = "declared"

    def __post_init__(self):
        kind = RegimeKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in _NEEDS_C:
            if self.c is None or not (self.c > 0 and math.isfinite(self.c)):
                raise ValueError(f"regime {kind.value} needs a positive constant, got {self.c}")
        if kind in _SLOW:
            if self.r_over_n_to_zero is False:
                raise ValueError(f"regime {kind.value} forces r(n)/n -> 0")
            object.__setattr__(self, "r_over_n_to_zero", True)
        elif self.r_over_n_to_zero is None:
            object.__setattr__(self, "r_over_n_to_zero", False)

    @property
    def r_to_infinity(self) -> bool:
        return self.kind is not RegimeKind.BOUNDED

    def spec(self) -> dict:
        out: dict[str, Any] = {"regime": self.kind.value}
        if self.kind is RegimeKind.BOUNDED:
            out["C0"] = self.c
        elif self.c is not None:
            out["c"] = self.c
        if self.kind is RegimeKind.SUPERLOG:
            out["r_over_n_to_zero"] = self.r_over_n_to_zero
        if not self.monotone:
            out["monotone"] = False
        return out

    def __str__(self):
        txt = self.kind.value
        if self.c is not None:
            txt += f"({'C0' if self.kind is RegimeKind.BOUNDED else 'c'}={self.c:g})"
        if self.kind is RegimeKind.SUPERLOG:
            txt += f"(r/n->0: {self.r_over_n_to_zero})"
        return txt


def regime_from_spec(spec: Mapping[str, Any] | str) -> RateRegime:
    """{"regime": "loglinear", "c": 1.0} and friends; JSON text is accepted."""
    if isinstance(spec, str):
        spec = json.loads(spec)
    try:
        kind = RegimeKind(str(spec["regime"]).lower())
    except (KeyError, ValueError):
        raise ValueError(f"unknown or missing regime in {spec!r}") from None
    c = spec.get("C0") if kind is RegimeKind.BOUNDED else spec.get("c")
    return RateRegime(kind, None if c is None else float(c),
                      monotone=bool(spec.get("monotone", True)),
                      r_over_n_to_zero=spec.get("r_over_n_to_zero"))


def _jc(regime: RateRegime, j: int) -> float:
    return j * regime.c


def decide_series(regime: RateRegime, series: SeriesKind) -> Decision:
    """Convergence of a criterion series under the regime.

    LogLinear at j c = 1 is decided (terms are comparable to 1/k, so the
    series diverges); Log2Linear at j c = 1 is not, since the o(1) term
    inside (c + o(1)) L2(n) decides it.
    """
    j, kind = series.j, regime.kind
    if j == 0:
        return Decision.DIVERGES
    if series.kind is Series.PLAIN_EXP:
        if kind is RegimeKind.LOGLINEAR:
            jc = _jc(regime, j)
            if jc > 1 and not math.isclose(jc, 1.0, rel_tol=1e-12):
                return Decision.CONVERGES
            return Decision.DIVERGES
        if kind is RegimeKind.SUPERLOG:
            return Decision.CONVERGES
        return Decision.DIVERGES
    if kind is RegimeKind.LOG2LINEAR:
        jc = _jc(regime, j)
        if math.isclose(jc, 1.0, rel_tol=1e-12):
            return Decision.UNDECIDABLE
        return Decision.CONVERGES if jc > 1 else Decision.DIVERGES
    if kind in (RegimeKind.LOGLINEAR, RegimeKind.SUPERLOG):
        return Decision.CONVERGES
    return Decision.DIVERGES


def _always_diverges(regime: RateRegime, series: Series) -> bool:
    if series is Series.PLAIN_EXP:
        return regime.kind in (RegimeKind.BOUNDED, RegimeKind.SUBLOG2, RegimeKind.LOG2LINEAR)
    return regime.kind in (RegimeKind.BOUNDED, RegimeKind.SUBLOG2)


def _require_theorem1(regime: RateRegime, what: str):
    missing = []
    if not regime.monotone:
        missing.append("r(n) monotone")
    if not regime.r_to_infinity:
        missing.append("r(n) -> infinity")
    if missing:
        raise PreconditionError(f"{what} needs " + " and ".join(missing))


def _theorem_b(regime: RateRegime) -> str | None:
    if regime.kind is RegimeKind.BOUNDED:
        return "Theorem B(ii)"
    if regime.kind is RegimeKind.SUBLOG2 and regime.monotone:
        return "Theorem B(i)"
    return None


_TO_VERDICT = {Decision.DIVERGES: Verdict.IO, Decision.CONVERGES: Verdict.FINITELY_OFTEN,
               Decision.UNDECIDABLE: Verdict.UNDECIDED}


@dataclass(frozen=True)
class Applied:
    """One result used in a report: theorem, the series consulted and the outcome."""

    tag: str
    target: str
    series: SeriesKind | None = None
    decision: Decision | None = None

    def __str__(self):
        if self.series is None:
            return f"{self.tag}: {self.target}"
        return f"{self.tag}: {self.series} {self.decision.value} -> {self.target}"


def _classify_upper(regime, l) -> tuple[Verdict, Applied]:
    if l < 0:
        raise ValueError("upper offsets are l >= 0")
    _require_theorem1(regime, "Theorem 1")
    target = f"M_n = a_n + {l}"
    if l <= 1:
        return Verdict.IO, Applied("Theorem 1(i)", f"{target} i.o.")
    s = plain(l - 1)
    d = decide_series(regime, s)
    return _TO_VERDICT[d], Applied("Theorem 1(ii)", f"{target}: {_TO_VERDICT[d].value}", s, d)


def classify_upper(regime: RateRegime, l: int) -> Verdict:
    """Verdict for {M_n = a_n + l i.o.}, l >= 0."""
    return _classify_upper(regime, l)[0]


def _classify_lower(regime, l, mode) -> tuple[Verdict, Applied]:
    if l < 1:
        raise ValueError("lower offsets are l >= 1")
    mode = Mode(mode)
    _require_theorem1(regime, "Theorems 2 and 3")
    if mode is Mode.AT_MOST:
        target = f"M_n <= a_n - {l}"
        if l == 1:
            return Verdict.IO, Applied("Theorem 2(i)", f"{target} i.o.")
        s = double(l - 1)
        d = decide_series(regime, s)
        return _TO_VERDICT[d], Applied("Theorem 2(ii)", f"{target}: {_TO_VERDICT[d].value}", s, d)
    target = f"M_n = a_n - {l}"
    s = double(l - 1)
    d = decide_series(regime, s)
    if d is Decision.CONVERGES:
        return Verdict.FINITELY_OFTEN, Applied(
            "Theorem 2(ii)", f"{target}: {Verdict.FINITELY_OFTEN.value} (contained in <= event)", s, d)
    if d is Decision.UNDECIDABLE:
        return Verdict.UNDECIDED, Applied("Theorem 3", f"{target}: undecided", s, d)
    if not regime.r_over_n_to_zero:
        raise PreconditionError(f"Theorem 3 for {target} needs r(n)/n -> 0")
    return Verdict.IO, Applied("Theorem 3", f"{target}: {Verdict.IO.value}", s, d)


def classify_lower(regime: RateRegime, l: int, mode: Mode | str = Mode.AT_MOST) -> Verdict:
    """Verdict for {M_n <= a_n - l i.o.} (AT_MOST) or {M_n = a_n - l i.o.} (EQUAL)."""
    return _classify_lower(regime, l, mode)[0]


def _first_converging(regime: RateRegime, series: Series):
    if _always_diverges(regime, series):
        return INF
    j = 1
    while True:
        d = decide_series(regime, SeriesKind(series, j))
        if d is Decision.CONVERGES:
            return j
        if d is Decision.UNDECIDABLE:
            return None
        j += 1


def limsup_offset(regime: RateRegime):
    """m with limsup (M_n - a_n) = m a.s.; math.inf if unbounded, None if undecided."""
    if _theorem_b(regime):
        return INF
    _require_theorem1(regime, "Corollary 1")
    return _first_converging(regime, Series.PLAIN_EXP)


def liminf_offset(regime: RateRegime):
    """m with liminf (M_n - a_n) = -m a.s.; math.inf if unbounded, None if undecided."""
    if _theorem_b(regime):
        return INF
    _require_theorem1(regime, "Corollary 2")
    return _first_converging(regime, Series.DOUBLE_EXP)


@dataclass
class AsymptoticReport:
    regime: RateRegime
    limsup_offset: float | int | None
    liminf_offset: float | int | None
    io_verdicts: dict[int, Verdict] = field(default_factory=dict)
    applied: list[Applied] = field(default_factory=list)
    precondition_failures: list[str] = field(default_factory=list)

    @staticmethod
    def _fmt(m, sign=""):
        if m is None:
            return "undecided"
        return f"{sign or '+'}infinity" if m == INF else f"{sign}{m}"

    def to_dict(self) -> dict:
        def enc(m):
            return None if m is None else ("inf" if m == INF else int(m))
        return {
            "regime": self.regime.spec(),
            "regime_source": self.regime.source,
            "fitted": self.regime.fitted,
            "limsup_offset": enc(self.limsup_offset),
            "liminf_offset": enc(self.liminf_offset),
            "io_verdicts": {str(l): v.value for l, v in sorted(self.io_verdicts.items())},
            "applied": [str(a) for a in self.applied],
            "precondition_failures": list(self.precondition_failures),
        }

    def to_text(self) -> str:
        lines = [f"regime: {self.regime}"
                 + (" [fitted, not asserted]" if self.regime.fitted else f" [{self.regime.source}]"),
                 f"limsup (M_n - a_n) = {self._fmt(self.limsup_offset)}",
                 f"liminf (M_n - a_n) = {self._fmt(self.liminf_offset, '-')}"]
        if self.io_verdicts and all(v is Verdict.IO for v in self.io_verdicts.values()) \
                and _theorem_b(self.regime):
            lines.append(f"all offsets i.o. ({_theorem_b(self.regime)})")
        lines.append("P(M_n = a_n + l i.o.):")
        for l, v in sorted(self.io_verdicts.items()):
            lines.append(f"  l = {l:+d}: {v.value}")
        lines.append("applied:")
        lines.extend(f"  {a}" for a in self.applied)
        if self.precondition_failures:
            lines.append("precondition failures:")
            lines.extend(f"  {f}" for f in self.precondition_failures)
        return "\n".join(lines)


def full_report(regime: RateRegime, offset_range=(-3, 3)) -> AsymptoticReport:
    """Verdict for every offset in the inclusive range, plus both offsets."""
    lo, hi = offset_range
    if lo > hi:
        raise ValueError("empty offset range")
    failures: list[str] = []
    applied: list[Applied] = []

    def guarded(fn):
        try:
            return fn()
        except PreconditionError as exc:
            failures.append(str(exc))
            return None

    sup = guarded(lambda: limsup_offset(regime))
    inf = guarded(lambda: liminf_offset(regime))
    report = AsymptoticReport(regime, sup, inf, applied=applied, precondition_failures=failures)
    tag_b = _theorem_b(regime)
    if tag_b:
        for l in range(lo, hi + 1):
            report.io_verdicts[l] = Verdict.IO
        applied.append(Applied(tag_b, "M_n = a_n + l i.o. for every integer l"))
        return report
    if isinstance(sup, int):
        applied.append(Applied("Theorem A(i)" if sup == 1 else "Corollary 1(i)",
                               f"limsup (M_n - a_n) = {sup}", plain(sup), Decision.CONVERGES))
    if isinstance(inf, int):
        applied.append(Applied("Theorem A(ii)" if inf == 1 else "Corollary 2(i)",
                               f"liminf (M_n - a_n) = -{inf}", double(inf), Decision.CONVERGES))
    for l in range(lo, hi + 1):
        try:
            if l >= 0:
                verdict, how = _classify_upper(regime, l)
            elif l == -1 and isinstance(sup, int):
                verdict, how = Verdict.IO, Applied("Corollary 1(ii)", "M_n = a_n - 1 i.o.")
            else:
                verdict, how = _classify_lower(regime, -l, Mode.EQUAL)
        except PreconditionError as exc:
            failures.append(f"l = {l}: {exc}")
            verdict, how = Verdict.UNDECIDED, None
        report.io_verdicts[l] = verdict
        if how is not None:
            applied.append(how)
    return report


def series_partial_sums(dist: DiscreteDistribution, series: SeriesKind, K: int) -> np.ndarray:
    """S_J = sum_{k<=J} term(k), J = 1..K, from the exact r(k). Diagnostic only."""
    R = dist.log_tails(K)
    r = np.diff(R)
    if series.kind is Series.PLAIN_EXP:
        terms = np.exp(-series.j * r)
    else:
        with np.errstate(over="ignore"):
            terms = np.exp(-np.exp(series.j * r))
    return np.cumsum(terms)


def family_regime(dist: DiscreteDistribution) -> RateRegime:
    """The regime each supported family is known to be in.

    Poisson: r(n) = ln n + O(1). Geometric: r(n) = gamma. A table with a
    geometric continuation has r(n) bounded by its largest increment.
    """
    if isinstance(dist, Poisson):
        return RateRegime(RegimeKind.LOGLINEAR, 1.0, source="poisson family")
    if isinstance(dist, Geometric):
        return RateRegime(RegimeKind.BOUNDED, dist.gamma, source="geometric family")
    if isinstance(dist, PmfTable):
        m = len(dist.p)
        r = np.diff(dist.log_tails(m + 2))
        return RateRegime(RegimeKind.BOUNDED, float(r.max()), monotone=bool(np.all(np.diff(r) >= 0)),
                          source="pmf_table family")
    raise ValueError(f"no known regime for {dist!r}; supply one or fit")


def fit_regime(dist: DiscreteDistribution, k0: int = 10, K: int = 400) -> RateRegime:
    """Advisory least-squares fit of r(k), k0 <= k <= K, to candidate shapes.

    Candidates: constant, a L2(k) + b, a L(k) + b, and a power law a k^b for
    faster growth. The result is flagged ``fitted``.
    """
    if k0 < 3 or K <= k0 + 2:
        raise ValueError("need 3 <= k0 < K - 2")
    ks = np.arange(k0, K + 1, dtype=float)
    R = dist.log_tails(K)
    r = np.diff(R)[k0 - 1:]
    monotone = bool(np.all(np.diff(r) >= -1e-12 * np.abs(r[1:])))
    spread = (r.max() - r.min()) / max(abs(r.mean()), 1e-300)
    if spread < 1e-6:
        return RateRegime(RegimeKind.BOUNDED, float(np.diff(R).max()), monotone=monotone,
                          fitted=True, source="least-squares fit")
    L1 = np.log(ks)
    L2 = np.log(L1)
    fits = {}
    for name, x in (("log2linear", L2), ("loglinear", L1)):
        A = np.column_stack([x, np.ones_like(x)])
        coef, res, *_ = np.linalg.lstsq(A, r, rcond=None)
        fits[name] = (float(coef[0]), float(res[0]) if res.size else 0.0)
    A = np.column_stack([L1, np.ones_like(L1)])
    (beta, _), *_ = np.linalg.lstsq(A, np.log(np.maximum(r, 1e-300)), rcond=None)
    if beta > 0.5:
        return RateRegime(RegimeKind.SUPERLOG, monotone=monotone, r_over_n_to_zero=bool(beta < 1.0),
                          fitted=True, source="least-squares fit")
    name = min(fits, key=lambda n: fits[n][1])
    slope = fits[name][0]
    if slope <= 0:
        return RateRegime(RegimeKind.BOUNDED, float(np.diff(R).max()), monotone=monotone,
                          fitted=True, source="least-squares fit")
    return RateRegime(RegimeKind(name), slope, monotone=monotone, fitted=True,
                      source="least-squares fit")
