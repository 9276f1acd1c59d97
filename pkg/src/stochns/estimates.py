"""Certified Hilbert-Schmidt sums for the Stokes semigroup and parameter admissibility.

The central object is the series

    s_q(t) = sum_{j >= 1} j^(-2q/d) exp(-2 j^(2/d) t),

the squared Hilbert-Schmidt norm of ``S(t) A^(-q/2)`` for the diagonal model
``lambda_j = j^(2/d)``.  It is evaluated as an explicit partial sum plus a
two-sided bound on the tail.  The tail is split where the summand changes
convexity; on each convex piece the trapezoid and midpoint rules bracket the
sum by integrals (reversed on concave pieces), and the integrals are computed
by adaptive quadrature whose error estimate widens the bracket.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import integrate

__all__ = [
    "HsInterval",
    "HsQuery",
    "HsRegimeReport",
    "HsNorm",
    "AdmissibilityReport",
    "series_term",
    "series_integral",
    "s_q_series",
    "verify_hs_regime",
    "regime_name",
    "limit_constant",
    "hs_norm_S_Phi",
    "check_admissibility",
    "write_regime_csv",
    "write_regime_json",
]

J_CAP = 10**8
SLOPE_FLOOR = -0.01
_CHUNK = 1 << 20
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class HsInterval:
    """Certified enclosure ``lower <= s <= upper`` of a positive series."""

    lower: float
    upper: float
    partial_sum: float
    tail_lower: float
    tail_bound: float
    n_terms: int
    status: str = "ok"

    @property
    def value(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper


@dataclass(frozen=True)
class HsQuery:
    d: int
    q: float
    t: float
    J: int
    tail_bound: float
    interval: HsInterval


def series_term(x, t: float, q: float, d: int):
    """Summand ``x^(-2q/d) exp(-2 x^(2/d) t)``."""
    x = np.asarray(x, dtype=float)
    return x ** (-2.0 * q / d) * np.exp(-2.0 * t * x ** (2.0 / d))


def series_integral(a: float, b: float, t: float, q: float, d: int) -> tuple[float, float]:
    """``int_a^b series_term(x) dx`` and an absolute error bound (``b`` may be ``inf``)."""
    if b <= a:
        return 0.0, 0.0
    m = 2.0 * q / d
    if t == 0.0:
        if m <= 1.0 and math.isinf(b):
            return math.inf, 0.0
        if m == 1.0:
            return math.log(b / a), 0.0
        upper = 0.0 if math.isinf(b) else b ** (1 - m)
        val = (a ** (1 - m) - upper) / (m - 1)
        return val, 4 * _EPS * abs(val)
    # y = 2 t x^(2/d), then u = log y
    s = d / 2.0 - q
    pref = 0.5 * d * (2.0 * t) ** (-s)
    ya = 2.0 * t * a ** (2.0 / d)
    lo = math.log(ya)
    if math.isinf(b):
        hi = math.log(max(ya, abs(s), 1.0) + 800.0)
    else:
        hi = math.log(2.0 * t * b ** (2.0 / d))
    if hi <= lo:
        return 0.0, 0.0

    def f(u: float) -> float:
        return math.exp(s * u - math.exp(u))

    pts = [math.log(s)] if s > 0 and lo < math.log(s) < hi else None
    val, err = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-13, limit=500, points=pts)
    return pref * val, pref * (err + 4 * _EPS * abs(val))


def _inflections(t: float, q: float, d: int) -> list[float]:
    """x > 0 where the summand changes convexity (empty when convex throughout)."""
    m = 2.0 * q / d
    if t == 0.0 or m >= 0:
        return []
    # x^2 a''/a = y^2 + (2m + 1 - 2/d) y + m + m^2 with y = (4t/d) x^(2/d)
    b = 2 * m + 1 - 2.0 / d
    c = m + m * m
    disc = b * b - 4 * c
    if disc <= 0:
        return []
    roots = [(-b - math.sqrt(disc)) / 2, (-b + math.sqrt(disc)) / 2]
    scale = d / (4.0 * t)
    return [(y * scale) ** (d / 2.0) for y in roots if y > 0]


def _convex_at(x: float, t: float, q: float, d: int) -> bool:
    m = 2.0 * q / d
    if t == 0.0:
        return m * (m + 1) >= 0
    y = 4.0 * t / d * x ** (2.0 / d)
    return y * y + (2 * m + 1 - 2.0 / d) * y + m + m * m >= 0


def _exact_sum(lo: int, hi: int, t: float, q: float, d: int) -> float:
    total = 0.0
    for start in range(lo, hi + 1, _CHUNK):
        stop = min(hi, start + _CHUNK - 1)
        total += float(series_term(np.arange(start, stop + 1, dtype=float), t, q, d).sum())
    return total


def _tail_bracket(first: int, t: float, q: float, d: int) -> tuple[float, float]:
    """Two-sided bound of ``sum_{j >= first} a(j)``."""
    bounds = [first - 0.5] + [x for x in _inflections(t, q, d) if x > first - 0.5] + [math.inf]
    lower = upper = 0.0
    next_int = first
    for left, right in zip(bounds[:-1], bounds[1:]):
        alpha = math.ceil(left + 0.5)
        beta = math.inf if math.isinf(right) else math.floor(right - 0.5)
        if alpha > next_int:
            gap = _exact_sum(next_int, alpha - 1, t, q, d)
            lower += gap
            upper += gap
            next_int = alpha
        if beta < alpha:
            continue
        if beta - alpha < 64:
            part = _exact_sum(alpha, int(beta), t, q, d)
            lower += part
            upper += part
            next_int = int(beta) + 1
            continue
        mid = alpha + 1.0 if math.isinf(beta) else 0.5 * (alpha + beta)
        ends = float(series_term(alpha, t, q, d))
        if not math.isinf(beta):
            ends += float(series_term(beta, t, q, d))
        inner, e1 = series_integral(alpha, beta, t, q, d)
        outer, e2 = series_integral(alpha - 0.5, beta + 0.5, t, q, d)
        trap = inner + 0.5 * ends
        if _convex_at(mid, t, q, d):
            lower += trap - e1
            upper += outer + e2
        else:
            lower += outer - e2
            upper += trap + e1
        if math.isinf(beta):
            break
        next_int = int(beta) + 1
    return lower, upper


def _certified(t: float, q: float, d: int, J: int | None, rtol: float) -> HsInterval:
    if J is not None:
        candidates = [int(J)]
    else:
        candidates = []
        j = 16
        while j < J_CAP:
            candidates.append(j)
            j *= 4
        candidates.append(J_CAP)
    partial = 0.0
    done = 0
    result = None
    for j in candidates:
        partial += _exact_sum(done + 1, j, t, q, d)
        done = j
        tl, tu = _tail_bracket(j + 1, t, q, d)
        guard = 4 * _EPS * math.log2(j + 2) * (partial + abs(tu))
        lower = partial + tl - guard
        upper = partial + tu + guard
        status = "ok"
        if J is None and j == J_CAP:
            status = "cap reached"
        result = HsInterval(lower, upper, partial, tl, tu, j, status)
        if upper - lower <= rtol * lower:
            break
    assert result is not None
    return result


def s_q_series(t: float, q: float, d: int, J: int | None = None, rtol: float = 1e-10) -> HsInterval:
    """Certified enclosure of ``s_q(t)``.

    With ``J=None`` the number of explicit terms is increased until the
    enclosure is narrower than ``rtol`` times its value (or ``J_CAP`` is hit,
    flagged by ``status == "cap reached"``).
    """
    if not t > 0:
        raise ValueError(f"s_q_series needs t > 0, got {t}")
    if J is not None and J < 1:
        raise ValueError("J must be >= 1")
    return _certified(t, q, d, J, rtol)


def _shape_sq(t: np.ndarray, q: float, d: int) -> np.ndarray:
    if math.isclose(q, d / 2.0):
        return (2.0 - np.log(t)) ** 2
    return t ** (q - d / 2.0)


def limit_constant(q: float, d: int) -> float:
    """``lim_{t -> 0} t^(d/2 - q) s_q(t) = (d/2) Gamma(d/2 - q) 2^(q - d/2)`` for ``q < d/2``."""
    if not q < d / 2.0 or math.isclose(q, d / 2.0):
        raise ValueError("the power-law limit exists only for q < d/2")
    return 0.5 * d * math.gamma(0.5 * d - q) * 2.0 ** (q - 0.5 * d)


def regime_name(q: float, d: int) -> str:
    if math.isclose(q, d / 2.0):
        return "critical"
    if q > d / 2.0:
        return "hilbert-schmidt"
    return "subcritical" if q >= 0 else "negative"


@dataclass
class HsRegimeReport:
    d: int
    q: float
    regime: str
    t: np.ndarray
    partial_sum: np.ndarray
    tail_bound: np.ndarray
    upper: np.ndarray
    shape: np.ndarray
    ratio: np.ndarray
    fitted_M: float
    sup_ratio: float
    slope: float
    passed: bool
    statuses: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "regime": self.regime,
            "d": self.d,
            "q": self.q,
            "fitted_M": self.fitted_M,
            "sup_ratio": self.sup_ratio,
            "slope": self.slope,
            "pass": self.passed,
        }


def verify_hs_regime(q: float, d: int, t_grid) -> HsRegimeReport:
    """Check the small-time shape of ``s_q`` against its claimed bound.

    ``ratio = s_q(t) / g(t)^2`` with ``g^2 = (2 - ln t)^2`` at ``q = d/2`` and
    ``g^2 = t^(q - d/2)`` below.  The shape is confirmed when the ratio is
    finite on the whole grid and the least-squares slope of ``log ratio``
    against ``log t`` over the last decade is at least ``SLOPE_FLOOR``
    (no growth as ``t -> 0``).  ``fitted_M`` is ``sqrt(sup ratio)``.
    """
    if q > d / 2.0 and not math.isclose(q, d / 2.0):
        raise ValueError("q > d/2 is the Hilbert-Schmidt regime; use hs_norm_S_Phi")
    t = np.sort(np.asarray(t_grid, dtype=float))
    if t[0] <= 0 or t[-1] > 1:
        raise ValueError("t_grid must lie in (0, 1]")
    intervals = [s_q_series(float(ti), q, d) for ti in t]
    upper = np.array([iv.upper for iv in intervals])
    shape = _shape_sq(t, q, d)
    ratio = upper / shape
    last = t <= 10.0 * t[0]
    if last.sum() >= 2:
        slope = float(np.polyfit(np.log(t[last]), np.log(ratio[last]), 1)[0])
    else:
        slope = math.nan
    sup_ratio = float(ratio.max())
    passed = bool(np.all(np.isfinite(ratio)) and slope >= SLOPE_FLOOR)
    return HsRegimeReport(
        d=d,
        q=q,
        regime=regime_name(q, d),
        t=t,
        partial_sum=np.array([iv.partial_sum for iv in intervals]),
        tail_bound=np.array([iv.tail_bound for iv in intervals]),
        upper=upper,
        shape=shape,
        ratio=ratio,
        fitted_M=math.sqrt(sup_ratio),
        sup_ratio=sup_ratio,
        slope=slope,
        passed=passed,
        statuses=[iv.status for iv in intervals],
    )


def write_regime_csv(report: HsRegimeReport, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "partial_sum", "tail_bound", "bound_shape_value", "ratio"])
        for row in zip(report.t, report.partial_sum, report.tail_bound, report.shape, report.ratio):
            w.writerow([repr(float(v)) for v in row])
    return path


def write_regime_json(report: HsRegimeReport, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report.summary(), indent=2))
    return path


@dataclass(frozen=True)
class HsNorm:
    """``||S(t) A^(-q/2)||_HS`` enclosure; ``phi_hs`` is ``||A^(-q/2)||_HS`` when ``q > d/2``."""

    t: float
    q: float
    d: int
    lower: float
    upper: float
    bounded: bool
    phi_hs: tuple[float, float] | None = None

    @property
    def value(self) -> float:
        return 0.5 * (self.lower + self.upper)


def hs_norm_S_Phi(t: float, q: float, d: int, J: int | None = None) -> HsNorm:
    """Hilbert-Schmidt norm of ``S(t) Phi`` with ``Phi = A^(-q/2)``, ``lambda_j = j^(2/d)``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    phi = None
    if q > d / 2.0 and not math.isclose(q, d / 2.0):
        iv = _certified(0.0, q, d, J, 1e-10)
        phi = (math.sqrt(iv.lower), math.sqrt(iv.upper))
    if t == 0:
        if phi is None:
            return HsNorm(t, q, d, math.inf, math.inf, False)
        return HsNorm(t, q, d, phi[0], phi[1], True, phi)
    iv = s_q_series(t, q, d, J)
    return HsNorm(t, q, d, math.sqrt(iv.lower), math.sqrt(iv.upper), True, phi)


@dataclass(frozen=True)
class AdmissibilityReport:
    d: int
    p: float
    q: float
    hurst: float
    lhs: float
    margin: float
    admissible: bool
    existence_applicable: bool
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return asdict(self)


def check_admissibility(d: int, p: float, q: float, hurst: float) -> AdmissibilityReport:
    """Evaluate ``(d/2)(1 - 1/p) - q/2 < H < 1`` together with ``p > d``.

    The decision is made in exact rational arithmetic on the given floats,
    so ties (e.g. ``H = 1 - 1/p`` at ``d = 2, q = 0``) are never admissible.
    """
    if d not in (2, 3):
        raise ValueError("d must be 2 or 3")
    if not p > 2:
        raise ValueError("p must exceed 2")
    P, Q, H = Fraction(p), Fraction(q), Fraction(hurst)
    lhs = Fraction(d, 2) * (1 - 1 / P) - Q / 2
    applicable = P > d
    admissible = bool(H > lhs and H < 1 and applicable)
    notes = []
    if not applicable:
        notes.append("existence theorem inapplicable: p <= d")
    if lhs >= 1:
        notes.append("inadmissible for all H < 1")
    return AdmissibilityReport(
        d=d,
        p=float(p),
        q=float(q),
        hurst=float(hurst),
        lhs=float(lhs),
        margin=float(H - lhs),
        admissible=admissible,
        existence_applicable=bool(applicable),
        notes=tuple(notes),
    )
