"""Empirical-likelihood layer: tilted weights, profile statistic, lower bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from elmax.geometry import levelset_point, profile_stat_max
from elmax.kernel import ScoreMatrix, ScoreSummary, as_scores, chi2_quantile, summarize

__all__ = [
    "Method",
    "WeightSolution",
    "ProfileResult",
    "ConfidenceBound",
    "min_norm_weights",
    "profile_statistic",
    "simplex_lower_bound",
    "invert_profile_bound",
    "inflation_ratio",
]


class Method(str, Enum):
    CHI2 = "chi2"
    ORDINARY = "ordinary-boot"
    CORRECTED = "corrected-boot"
    JOINT = "projected-joint"
    WALD = "selected-wald"
    FANG_SANTOS = "fang-santos"


@dataclass(frozen=True)
class WeightSolution:
    """Probability weights q closest to uniform that move the mean to a target.

    ``cost`` is sum_i (n q_i - 1)^2; ``interior`` is False when some q_i is
    not strictly positive, i.e. the unconstrained minimum-norm solution
    leaves the simplex.
    """

    weights: np.ndarray
    cost: float
    interior: bool


@dataclass(frozen=True)
class ProfileResult:
    value: float
    face: tuple[int, ...]
    point: np.ndarray
    weights: WeightSolution


@dataclass(frozen=True)
class ConfidenceBound:
    lower: float
    level: float
    critical_value: float
    weights: np.ndarray
    face: tuple[int, ...]
    method: Method
    diagnostics: dict[str, Any] = field(default_factory=dict)


def min_norm_weights(scores, target_mean, summary: ScoreSummary | None = None) -> WeightSolution:
    """Minimum-norm tilt of the uniform weights onto a target mean.

    With centered scores U_i and shift d = target - mean the perturbations
    are a_i = U_i' S^{-1} d and q_i = (1 + a_i) / n; positivity of q is not
    imposed.
    """
    X = as_scores(scores).values
    summary = summary if summary is not None else summarize(X)
    n = X.shape[0]
    target = np.asarray(target_mean, dtype=float)
    shift = target - summary.mean
    a = (X - summary.mean) @ summary.solve(shift)
    q = (1.0 + a) / n
    cost = float(np.sum((n * q - 1.0) ** 2))
    return WeightSolution(weights=q, cost=cost, interior=bool(np.min(q) > 0.0))


def profile_statistic(scores, tau0: float) -> ProfileResult:
    """Euclidean profile statistic for ``max_j theta_j = tau0``.

    The value is the face-decomposition distance; the weights are the
    minimum-norm weights that reach the projection point.
    """
    X = as_scores(scores)
    summary = summarize(X)
    value, point, face = levelset_point(summary, tau0)
    weights = min_norm_weights(X, point, summary)
    return ProfileResult(value=value, face=face, point=point, weights=weights)


# ---------------------------------------------------------------- simplex bound


def _objective(w, mean, cov, radius):
    sw = cov @ w
    var = float(w @ sw)
    sd = math.sqrt(var)
    return float(w @ mean) - radius * sd, mean - radius * sw / sd, sw, sd


def _line_search(w, d, mean, cov, radius, gmax):
    """Exact maximizer over t in [0, gmax] of f(w + t d)."""
    b = float(d @ mean)
    sw = cov @ w
    q0 = float(w @ sw)
    q1 = float(d @ sw)
    q2 = float(d @ cov @ d)
    if q2 <= 0.0:
        return gmax if b > 0 else 0.0
    disc = q0 * q2 - q1 * q1
    denom = radius * radius * q2 - b * b
    cands = [0.0, gmax]
    if denom > 0.0 and disc >= 0.0:
        h = math.copysign(math.sqrt(b * b * max(disc, 0.0) / denom), b)
        t = (h - q1) / q2
        if 0.0 < t < gmax:
            cands.append(t)

    def f(t):
        v = w + t * d
        return float(v @ mean) - radius * math.sqrt(max(float(v @ cov @ v), 0.0))

    return max(cands, key=f)


def _newton_face(w, support, mean, cov, radius, tol):
    """Newton ascent of the objective restricted to the face spanned by ``support``.

    Stops at a stationary point of the face or when a weight reaches zero.
    """
    idx = np.flatnonzero(support)
    k = idx.size
    if k < 2:
        return w
    for _ in range(50):
        f, g, sw, sd = _objective(w, mean, cov, radius)
        H = -radius * (cov[np.ix_(idx, idx)] / sd - np.outer(sw[idx], sw[idx]) / sd**3)
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = H
        kkt[:k, k] = -1.0
        kkt[k, :k] = 1.0
        rhs = np.concatenate([-g[idx], [0.0]])
        try:
            step = np.linalg.solve(kkt, rhs)[:k]
        except np.linalg.LinAlgError:
            return w
        if not np.all(np.isfinite(step)) or np.max(np.abs(step)) < 1e-15:
            return w
        d = np.zeros_like(w)
        d[idx] = step
        neg = d < 0
        tmax = float(np.min(-w[neg] / d[neg])) if neg.any() else np.inf
        t = min(1.0, tmax)
        # backtrack until the objective does not decrease
        while t > 1e-12:
            cand = w + t * d
            if _objective(np.clip(cand, 0.0, None), mean, cov, radius)[0] >= f - 1e-15 * (1 + abs(f)):
                break
            t *= 0.5
        else:
            return w
        w = np.clip(w + t * d, 0.0, None)
        w /= w.sum()
        if t < 1.0 and t == tmax:
            return w
        if np.max(np.abs(t * step)) < tol:
            return w
    return w


def _maximize_simplex(mean, cov, radius, tol=1e-9, max_iter=5000):
    J = mean.shape[0]
    if J == 1:
        return np.ones(1), float(mean[0] - radius * math.sqrt(cov[0, 0])), 0.0, 0
    start = int(np.argmax(mean - radius * np.sqrt(np.diag(cov))))
    w = np.zeros(J)
    w[start] = 1.0
    gap = np.inf
    for it in range(max_iter):
        f, g, _, _ = _objective(w, mean, cov, radius)
        s = int(np.argmax(g))
        gw = float(g @ w)
        gap = float(g[s] - gw)
        if gap <= tol * (1.0 + abs(f)):
            return w, f, gap, it
        support = w > 0.0
        sup_idx = np.flatnonzero(support)
        a = int(sup_idx[np.argmin(g[sup_idx])])
        away_gain = gw - float(g[a])
        if gap >= away_gain or w[a] >= 1.0:
            d = -w.copy()
            d[s] += 1.0
            gmax = 1.0
        else:
            d = w.copy()
            d[a] -= 1.0
            gmax = w[a] / (1.0 - w[a])
        t = _line_search(w, d, mean, cov, radius, gmax)
        w = w + t * d
        w[w < 1e-15] = 0.0
        w /= w.sum()
        # polish on the current face; exact for supports of any size
        w = _newton_face(w, w > 0.0, mean, cov, radius, 1e-14)
    f, g, _, _ = _objective(w, mean, cov, radius)
    return w, f, float(np.max(g) - g @ w), max_iter


def simplex_lower_bound(
    summary: ScoreSummary, c: float, *, method: Method = Method.CHI2, level: float | None = None
) -> ConfidenceBound:
    """Lower confidence bound ``max_w {w'mean - sqrt(c/n) sqrt(w'S w)}`` over the simplex."""
    if not c > 0:
        raise ValueError(f"critical value must be positive, got {c!r}")
    radius = math.sqrt(c / summary.n)
    w, L, gap, iters = _maximize_simplex(summary.mean, summary.cov, radius)
    face = tuple(int(j) for j in np.flatnonzero(w > 1e-9))
    return ConfidenceBound(
        lower=L,
        level=level if level is not None else float("nan"),
        critical_value=float(c),
        weights=w,
        face=face,
        method=Method(method),
        diagnostics={"duality_gap": gap, "iterations": iters},
    )


def invert_profile_bound(scores, c: float, tol: float = 1e-10) -> float:
    """Smallest tau <= max mean with profile statistic equal to ``c``, by bisection."""
    if not c > 0:
        raise ValueError(f"critical value must be positive, got {c!r}")
    summary = scores if isinstance(scores, ScoreSummary) else summarize(scores)
    hi = float(np.max(summary.mean))
    step = math.sqrt(c / summary.n) * math.sqrt(float(np.max(np.diag(summary.cov))))
    step = max(step, 1e-12 * (1.0 + abs(hi)))
    lo = hi - step
    while profile_stat_max(summary, lo)[0] < c:
        step *= 2.0
        lo = hi - step
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if profile_stat_max(summary, mid)[0] < c:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def inflation_ratio(J: int, alpha: float) -> float:
    """Radius ratio sqrt(chi2_{J,1-alpha} / chi2_{1,1-alpha})."""
    if J < 1:
        raise ValueError("J must be at least 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return math.sqrt(chi2_quantile(J, 1.0 - alpha) / chi2_quantile(1, 1.0 - alpha))
