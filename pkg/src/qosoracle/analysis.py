"""Closed-form model of threshold aggregation under periodic data.

Response times are N(mu, sigma^2) restricted to [0, inf). A fetch "agrees"
when it completes inside a window [x, x + T] of one source period, so one
node agrees with probability P = S_t / S_total, and ``n`` independent nodes
reach a threshold ``t`` with the binomial upper tail.

Throughout, ``x`` is the window start and ``t`` the signature threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

_SQRT2 = math.sqrt(2.0)


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class WindowModel:
    mu: float
    sigma: float
    period: float
    start: float = 0.0

    def __post_init__(self):
        _check_normal(self.mu, self.sigma)
        if not self.period >= 0:
            raise ParameterError(f"period must be >= 0, got {self.period}")
        if not self.start >= 0:
            raise ParameterError(f"window start must be >= 0, got {self.start}")


@dataclass(frozen=True)
class SuccessModel:
    n: int
    t: int
    p: float

    def __post_init__(self):
        _check_success(self.n, self.t, self.p)

    @property
    def probability(self) -> float:
        return agg_success_prob(self.n, self.t, self.p)


def _check_normal(mu, sigma):
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    if not mu >= 0:
        raise ParameterError(f"mu must be >= 0, got {mu}")


def _check_success(n, t, p):
    if int(n) != n or int(t) != t:
        raise ParameterError("n and t must be integers")
    if t < 1 or n < 1:
        raise ParameterError(f"need n, t >= 1, got n={n}, t={t}")
    if t > n:
        raise ParameterError(f"threshold t={t} exceeds node count n={n}")
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"p must lie in [0, 1], got {p}")


def _cdf(z):
    return 0.5 * math.erfc(-z / _SQRT2)


def _sf(z):
    return 0.5 * math.erfc(z / _SQRT2)


def normal_mass(mu, sigma, lo, hi) -> float:
    """Mass of N(mu, sigma^2) on [lo, hi] via complementary error functions.

    Works on whichever tail keeps both terms small so that narrow windows far
    from the mean do not cancel catastrophically.
    """
    if hi <= lo:
        return 0.0
    za = (lo - mu) / sigma
    zb = (hi - mu) / sigma if math.isfinite(hi) else math.inf
    if za >= 0:
        return _sf(za) - (_sf(zb) if math.isfinite(zb) else 0.0)
    if math.isfinite(zb) and zb <= 0:
        return _cdf(zb) - _cdf(za)
    upper = _sf(zb) if math.isfinite(zb) else 0.0
    return 1.0 - _cdf(za) - upper


def _pdf(x, mu, sigma):
    z = (x - mu) / sigma
    return math.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))


def simpson_mass(mu, sigma, lo, hi, tol=1e-9) -> float:
    """Adaptive Simpson quadrature of the normal density on [lo, hi].

    An infinite ``hi`` is cut at mu + 40 sigma.
    """
    if hi <= lo:
        return 0.0
    if not math.isfinite(hi):
        hi = max(lo, mu + 40.0 * sigma)
    f = lambda x: _pdf(x, mu, sigma)  # noqa: E731

    def simpson(a, fa, b, fb):
        m = 0.5 * (a + b)
        fm = f(m)
        return m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, fa, b, fb, m, fm, whole, eps, depth):
        lm, flm, left = simpson(a, fa, m, fm)
        rm, frm, right = simpson(m, fm, b, fb)
        diff = left + right - whole
        if depth <= 0 or abs(diff) <= 15.0 * eps:
            return left + right + diff / 15.0
        return recurse(a, fa, m, fm, lm, flm, left, eps / 2, depth - 1) + recurse(
            m, fm, b, fb, rm, frm, right, eps / 2, depth - 1
        )

    # split at the mean so a narrow peak is never skipped by the first panel
    edges = [lo] + [x for x in (mu - 5 * sigma, mu, mu + 5 * sigma) if lo < x < hi] + [hi]
    total = 0.0
    for a, b in zip(edges, edges[1:]):
        fa, fb = f(a), f(b)
        m, fm, whole = simpson(a, fa, b, fb)
        total += recurse(a, fa, b, fb, m, fm, whole, tol / (len(edges) - 1), 50)
    return total


def total_mass(mu, sigma, method="cdf") -> float:
    """Mass of N(mu, sigma^2) on [0, inf); lies in [0.5, 1] for mu >= 0."""
    _check_normal(mu, sigma)
    if method == "simpson":
        return simpson_mass(mu, sigma, 0.0, math.inf)
    return normal_mass(mu, sigma, 0.0, math.inf)


def window_mass(model: WindowModel, method="cdf") -> float:
    lo, hi = model.start, model.start + model.period
    if method == "simpson":
        return simpson_mass(model.mu, model.sigma, lo, hi)
    return normal_mass(model.mu, model.sigma, lo, hi)


def single_trial_p(model: WindowModel, method="cdf") -> float:
    p = window_mass(model, method) / total_mass(model.mu, model.sigma, method)
    return min(1.0, max(0.0, p))


def best_window(mu, sigma, period, iterations=200) -> float:
    """Window start ``x >= 0`` that maximises the window mass.

    Ternary search; the mass is unimodal in ``x``.
    """
    _check_normal(mu, sigma)
    if period <= 0 or not math.isfinite(period):
        return 0.0
    lo, hi = 0.0, max(mu, 0.0) + 10.0 * sigma
    mass = lambda x: normal_mass(mu, sigma, x, x + period)  # noqa: E731
    for _ in range(iterations):
        a = lo + (hi - lo) / 3.0
        b = hi - (hi - lo) / 3.0
        if mass(a) < mass(b):
            lo = a
        else:
            hi = b
    return 0.5 * (lo + hi)


def _binom_terms(n, t, p, lo, hi):
    if p == 0.0:
        return [1.0] if lo == 0 else []
    if p == 1.0:
        return [1.0] if hi == n else []
    if n <= 50:
        return [math.comb(n, i) * p**i * (1.0 - p) ** (n - i) for i in range(lo, hi + 1)]
    lp, lq = math.log(p), math.log1p(-p)
    lgn = math.lgamma(n + 1)
    return [
        math.exp(lgn - math.lgamma(i + 1) - math.lgamma(n - i + 1) + i * lp + (n - i) * lq)
        for i in range(lo, hi + 1)
    ]


def agg_success_prob(n, t, p) -> float:
    """P(at least ``t`` of ``n`` independent trials succeed)."""
    _check_success(n, t, p)
    return math.fsum(_binom_terms(n, t, p, t, n))


def agg_failure_prob(n, t, p) -> float:
    _check_success(n, t, p)
    return math.fsum(_binom_terms(n, t, p, 0, t - 1))


def monotonicity_table(t, p, ns) -> list[tuple[int, float]]:
    return [(n, agg_success_prob(n, t, p)) for n in ns]


def success_summary(mu, sigma, period, n, t, start=None) -> dict:
    """Every intermediate of the model for one configuration.

    ``start=None`` picks the best window.
    """
    if start is None:
        start = best_window(mu, sigma, period)
    model = WindowModel(mu, sigma, period, start)
    s_total = total_mass(mu, sigma)
    s_t = window_mass(model)
    p = single_trial_p(model)
    return {
        "mu": mu,
        "sigma": sigma,
        "period": period,
        "start": start,
        "s_total": s_total,
        "s_t": s_t,
        "p": p,
        "n": n,
        "t": t,
        "success": agg_success_prob(n, t, p),
    }
