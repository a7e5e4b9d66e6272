"""Rate summaries and Welch's unequal-variance t-test.

The Student-t tail probability comes from our own regularized incomplete
beta function (Lentz continued fraction); no scipy at runtime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import ValidationError

BETACF_TOL = 1e-12
BETACF_MAX_ITER = 10_000
_TINY = 1e-300


@dataclass(frozen=True)
class SampleSet:
    label: str
    values: tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ValidationError(f"sample set {self.label!r} is empty", field="values")
        if any(not math.isfinite(v) or v < 0 for v in values):
            raise ValidationError(f"sample set {self.label!r} has negative or non-finite values", field="values")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return len(self.values)


def _as_set(x, label="") -> SampleSet:
    return x if isinstance(x, SampleSet) else SampleSet(label, tuple(x))


def mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def sample_variance(values: Sequence[float]) -> float:
    n = len(values)
    if n < 2:
        return 0.0
    m = mean(values)
    return math.fsum((v - m) ** 2 for v in values) / (n - 1)


def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    rank = max(1, math.ceil(pct / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


def summarize(values) -> dict:
    """mean, sample sdev (n-1), min, max, nearest-rank p50/p95 and n."""
    s = _as_set(values)
    ordered = sorted(s.values)
    return {
        "mean": mean(ordered),
        "sdev_sample": math.sqrt(sample_variance(ordered)),
        "min": ordered[0],
        "max": ordered[-1],
        "p50": nearest_rank(ordered, 50),
        "p95": nearest_rank(ordered, 95),
        "n": s.n,
    }


def _betacf(a: float, b: float, x: float) -> float:
    # Modified Lentz evaluation of the incomplete-beta continued fraction.
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < BETACF_TOL:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValidationError("betainc requires a > 0 and b > 0")
    if not 0.0 <= x <= 1.0:
        raise ValidationError("betainc requires 0 <= x <= 1")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, dof: float) -> float:
    """P(|T| >= |t|) for Student's t with ``dof`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    p = betainc(dof / 2.0, 0.5, dof / (dof + t * t))
    return min(1.0, max(0.0, p))


@dataclass(frozen=True)
class WelchResult:
    t: float
    dof: float
    p_two_sided: float
    significant_at: Mapping[float, bool] = field(default_factory=dict)


STANDARD_ALPHAS = (0.01, 0.05, 0.10)


def welch_t(a, b, alpha: float = 0.05) -> WelchResult:
    """Two-sample Welch t-test with Welch-Satterthwaite degrees of freedom."""
    a, b = _as_set(a, "a"), _as_set(b, "b")
    if a.n < 2 or b.n < 2:
        raise ValidationError("welch_t needs at least 2 values per sample set", field="values")
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie in (0, 1)", field="alpha")
    ma, mb = mean(a.values), mean(b.values)
    qa = sample_variance(a.values) / a.n
    qb = sample_variance(b.values) / b.n
    se2 = qa + qb
    if se2 == 0.0:
        # Zero-variance convention: equal means p=1, different means p=0.
        dof = float(a.n + b.n - 2)
        if ma == mb:
            t, p = 0.0, 1.0
        else:
            t, p = math.copysign(math.inf, ma - mb), 0.0
    else:
        t = (ma - mb) / math.sqrt(se2)
        dof = se2 * se2 / (qa * qa / (a.n - 1) + qb * qb / (b.n - 1))
        p = t_two_sided_p(t, dof)
    alphas = sorted(set(STANDARD_ALPHAS) | {alpha})
    return WelchResult(t=t, dof=dof, p_two_sided=p, significant_at={x: p < x for x in alphas})
