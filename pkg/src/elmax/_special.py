"""Incomplete gamma, normal cdf and their inverses.

Self-contained so that quantiles do not depend on an external
special-function library.
"""

from __future__ import annotations

import math

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _gamma_series(a: float, x: float) -> float:
    # P(a, x) by the power series, good for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cfrac(a: float, x: float) -> float:
    # Q(a, x) by the modified Lentz continued fraction, good for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma function P(a, x)."""
    if a <= 0:
        raise ValueError("shape parameter must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cfrac(a, x)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma function Q(a, x) = 1 - P(a, x)."""
    if a <= 0:
        raise ValueError("shape parameter must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cfrac(a, x)


def chi2_cdf(x: float, df: float) -> float:
    if x <= 0:
        return 0.0
    return gammainc_lower(0.5 * df, 0.5 * x)


def chi2_sf(x: float, df: float) -> float:
    if x <= 0:
        return 1.0
    return gammainc_upper(0.5 * df, 0.5 * x)


def chi2_pdf(x: float, df: float) -> float:
    if x <= 0:
        return 0.0
    k = 0.5 * df
    return math.exp((k - 1.0) * math.log(x) - 0.5 * x - k * math.log(2.0) - math.lgamma(k))


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _invert_monotone(cdf, pdf, p: float, lo: float, hi: float, tol: float) -> float:
    """Safeguarded Newton on a bracket [lo, hi] with cdf(lo) <= p <= cdf(hi)."""
    x = 0.5 * (lo + hi)
    for _ in range(500):
        f = cdf(x) - p
        if f > 0:
            hi = x
        else:
            lo = x
        dens = pdf(x)
        step_ok = False
        if dens > 0:
            cand = x - f / dens
            if lo < cand < hi:
                step_ok = True
                new = cand
        if not step_ok:
            new = 0.5 * (lo + hi)
        if abs(new - x) <= tol or hi - lo <= tol:
            return new
        x = new
    return x


def chi2_ppf(p: float, df: int) -> float:
    if not (0.0 < p < 1.0):
        raise ValueError(f"probability must lie in (0, 1), got {p!r}")
    if df <= 0 or int(df) != df:
        raise ValueError(f"degrees of freedom must be a positive integer, got {df!r}")
    hi = max(1.0, float(df))
    while chi2_cdf(hi, df) < p:
        hi *= 2.0
    pdf = lambda x: chi2_pdf(x, df)  # noqa: E731
    if p <= 0.5:
        return _invert_monotone(lambda x: chi2_cdf(x, df), pdf, p, 0.0, hi, 1e-12)
    # upper tail: solve on the survival function to keep precision near p = 1
    q = 1.0 - p
    return _invert_monotone(
        lambda x: q - chi2_sf(x, df), pdf, 0.0, 0.0, hi, 1e-12
    )


def normal_ppf(p: float) -> float:
    if not (0.0 < p < 1.0):
        raise ValueError(f"probability must lie in (0, 1), got {p!r}")
    if p == 0.5:
        return 0.0
    if p > 0.5:
        return -_normal_ppf_core(1.0 - p)
    return _normal_ppf_core(p)


def _normal_ppf_core(p: float) -> float:
    lo, hi = -1.0, 1.0
    while normal_cdf(lo) > p:
        lo *= 2.0
    while normal_cdf(hi) < p:
        hi *= 2.0
    return _invert_monotone(normal_cdf, normal_pdf, p, lo, hi, 1e-13)
