"""Critical values: active-set estimation, score bootstraps and comparator bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from elmax.geometry import ConeSpec, cone_distances
from elmax.kernel import (
    RngStream,
    ScoreSummary,
    as_scores,
    chi2_quantile,
    normal_quantile,
    summarize,
)
from elmax.profile import ConfidenceBound, Method, simplex_lower_bound

__all__ = [
    "ActiveSetEstimate",
    "CalibrationResult",
    "order_statistic",
    "estimate_active_set",
    "ordinary_score_bootstrap",
    "corrected_multiplier_bootstrap",
    "multiplier_draws",
    "infer_lower_bound",
    "projected_joint_bound",
    "selected_policy_wald",
    "fang_santos_bound",
    "METHODS",
]

MULTIPLIERS = ("gaussian", "rademacher")

# CLI-facing method names
METHODS = ("auto", "chi2", "ordinary", "corrected", "joint", "wald", "fs")

# draws materialized at once when forming multiplier statistics
_CHUNK = 256


@dataclass(frozen=True)
class ActiveSetEstimate:
    indices: ConeSpec
    kappa: float
    gaps: np.ndarray


@dataclass(frozen=True)
class CalibrationResult:
    draws: np.ndarray
    critical_value: float
    alpha: float
    method: Method
    cone: ConeSpec
    seed: int

    def draw_summary(self) -> dict[str, float]:
        return _draw_summary(self.draws)


def order_statistic(draws, alpha: float) -> float:
    """The ceil((1 - alpha) B)-th smallest draw."""
    draws = np.sort(np.asarray(draws, dtype=float))
    B = draws.size
    if B == 0:
        raise ValueError("no bootstrap draws")
    # guard against (1 - alpha) * B landing a hair above an integer
    k = math.ceil((1.0 - alpha) * B - 1e-9)
    k = min(max(k, 1), B)
    return float(draws[k - 1])


def _summary_of(scores, summary):
    X = as_scores(scores)
    return X, (summary if summary is not None else summarize(X))


def estimate_active_set(summary: ScoreSummary) -> ActiveSetEstimate:
    """Policies within kappa_n = max_j sqrt(S_jj log n / n) of the leader."""
    n = summary.n
    kappa = float(np.max(np.sqrt(np.diag(summary.cov) * math.log(n) / n)))
    gaps = float(np.max(summary.mean)) - summary.mean
    idx = np.flatnonzero(gaps <= kappa)
    return ActiveSetEstimate(
        indices=ConeSpec.from_indices(idx, summary.J), kappa=kappa, gaps=gaps
    )


def _check_draws(B: int) -> int:
    B = int(B)
    if B < 1:
        raise ValueError(f"number of bootstrap draws must be at least 1, got {B}")
    return B


def ordinary_score_bootstrap(
    scores,
    B: int,
    stream: RngStream,
    alpha: float = 0.05,
    summary: ScoreSummary | None = None,
) -> CalibrationResult:
    """Efron resampling of score rows; distance of Z* to the hyperplane of the leader.

    The original-sample covariance and leader are used in every draw.
    """
    B = _check_draws(B)
    X, summary = _summary_of(scores, summary)
    values = X.values
    n = X.n
    j = summary.argmax()
    col = values[:, j]
    var = summary.cov[j, j]
    draws = np.empty(B)
    for b in range(B):
        idx = stream.child(b).generator.integers(0, n, size=n)
        z = math.sqrt(n) * (col[idx].mean() - summary.mean[j])
        draws[b] = z * z / var
    return CalibrationResult(
        draws=draws,
        critical_value=order_statistic(draws, alpha),
        alpha=alpha,
        method=Method.ORDINARY,
        cone=ConeSpec((j,), summary.J),
        seed=stream.master_seed,
    )


def _multipliers(stream: RngStream, n: int, kind: str) -> np.ndarray:
    g = stream.generator
    if kind == "gaussian":
        return g.standard_normal(n)
    if kind == "rademacher":
        return 2.0 * g.integers(0, 2, size=n) - 1.0
    raise ValueError(f"unknown multiplier {kind!r}; expected one of {MULTIPLIERS}")


def multiplier_draws(scores, B: int, multiplier: str, stream: RngStream, summary=None):
    """Yield blocks of Z^xi = n^{-1/2} sum_i xi_i (X_i - mean), one row per draw.

    Draw b uses the stream at ``path + (b,)``, so blocks can be formed in any
    order or in parallel without changing the values.
    """
    X, summary = _summary_of(scores, summary)
    if multiplier not in MULTIPLIERS:
        raise ValueError(f"unknown multiplier {multiplier!r}; expected one of {MULTIPLIERS}")
    U = X.values - summary.mean
    n = X.n
    scale = 1.0 / math.sqrt(n)
    for start in range(0, B, _CHUNK):
        stop = min(B, start + _CHUNK)
        xi = np.empty((stop - start, n))
        for b in range(start, stop):
            xi[b - start] = _multipliers(stream.child(b), n, multiplier)
        yield (xi @ U) * scale


def corrected_multiplier_bootstrap(
    scores,
    cone: ConeSpec,
    B: int,
    multiplier: str = "gaussian",
    stream: RngStream | None = None,
    alpha: float = 0.05,
    summary: ScoreSummary | None = None,
) -> CalibrationResult:
    """Multiplier draws of the distance from Z^xi to the estimated cone."""
    B = _check_draws(B)
    if stream is None:
        raise ValueError("a random stream is required")
    X, summary = _summary_of(scores, summary)
    if cone.ambient_dim != summary.J:
        raise ValueError("cone dimension does not match the scores")
    parts = [
        cone_distances(Z, summary, cone)
        for Z in multiplier_draws(X, B, multiplier, stream, summary)
    ]
    draws = np.concatenate(parts)
    return CalibrationResult(
        draws=draws,
        critical_value=order_statistic(draws, alpha),
        alpha=alpha,
        method=Method.CORRECTED,
        cone=cone,
        seed=stream.master_seed,
    )


def projected_joint_bound(summary: ScoreSummary, alpha: float = 0.05) -> ConfidenceBound:
    """Simplex bound at the ambient chi-square critical value with J degrees of freedom."""
    c = chi2_quantile(summary.J, 1.0 - alpha)
    return simplex_lower_bound(summary, c, method=Method.JOINT, level=1.0 - alpha)


def selected_policy_wald(summary: ScoreSummary, alpha: float = 0.05) -> ConfidenceBound:
    """One-sided Wald bound for the empirically best policy."""
    j = summary.argmax()
    z = normal_quantile(1.0 - alpha)
    lower = float(summary.mean[j] - z * math.sqrt(summary.cov[j, j] / summary.n))
    w = np.zeros(summary.J)
    w[j] = 1.0
    return ConfidenceBound(
        lower=lower,
        level=1.0 - alpha,
        critical_value=z * z,
        weights=w,
        face=(j,),
        method=Method.WALD,
        diagnostics={"selected": j, "z": z},
    )


def fang_santos_bound(
    scores,
    alpha: float = 0.05,
    B: int = 1000,
    multiplier: str = "gaussian",
    stream: RngStream | None = None,
    summary: ScoreSummary | None = None,
    active: ActiveSetEstimate | None = None,
) -> ConfidenceBound:
    """Bound anchored at the pointwise maximum: max_j mean_j - q / sqrt(n).

    ``q`` is the order statistic of the plug-in directional derivative
    max_{j in J_hat} Z^xi_j over multiplier draws.
    """
    B = _check_draws(B)
    if stream is None:
        raise ValueError("a random stream is required")
    X, summary = _summary_of(scores, summary)
    active = active if active is not None else estimate_active_set(summary)
    idx = list(active.indices.active)
    draws = np.concatenate(
        [np.max(Z[:, idx], axis=1) for Z in multiplier_draws(X, B, multiplier, stream, summary)]
    )
    q = order_statistic(draws, alpha)
    j = summary.argmax()
    w = np.zeros(summary.J)
    w[j] = 1.0
    return ConfidenceBound(
        lower=float(summary.mean[j] - q / math.sqrt(summary.n)),
        level=1.0 - alpha,
        critical_value=q,
        weights=w,
        face=(j,),
        method=Method.FANG_SANTOS,
        diagnostics={
            "active_set": list(active.indices.active),
            "kappa": active.kappa,
            "draws": _draw_summary(draws),
        },
    )


def _draw_summary(draws: np.ndarray) -> dict[str, float]:
    return {
        "B": int(draws.size),
        "min": float(np.min(draws)),
        "median": float(np.median(draws)),
        "mean": float(np.mean(draws)),
        "max": float(np.max(draws)),
    }


def infer_lower_bound(
    scores,
    alpha: float = 0.05,
    method: str = "auto",
    B: int = 1000,
    multiplier: str = "gaussian",
    stream: RngStream | None = None,
    smooth: str = "chi2",
    summary: ScoreSummary | None = None,
) -> ConfidenceBound:
    """Lower confidence bound for the best policy value.

    ``method="auto"`` estimates the active set; with a single active policy
    the critical value is chi2_1 (or the ordinary score bootstrap when
    ``smooth="ordinary"``), otherwise it is the corrected multiplier
    bootstrap over the estimated cone. The bound is then the simplex program
    at that critical value. The other methods select a fixed calibration
    or a comparator.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if smooth not in ("chi2", "ordinary"):
        raise ValueError(f"unknown smooth calibration {smooth!r}")
    X, summary = _summary_of(scores, summary)
    if method not in ("chi2", "joint", "wald"):
        _check_draws(B)
        if stream is None:
            raise ValueError("a random stream is required for bootstrap calibration")

    if method == "joint":
        return projected_joint_bound(summary, alpha)
    if method == "wald":
        return selected_policy_wald(summary, alpha)

    active = estimate_active_set(summary)
    diag = {
        "active_set": list(active.indices.active),
        "kappa": active.kappa,
    }
    if method == "fs":
        return fang_santos_bound(X, alpha, B, multiplier, stream, summary, active)

    calib = None
    if method == "chi2" or (method == "auto" and active.indices.is_hyperplane and smooth == "chi2"):
        c = chi2_quantile(1, 1.0 - alpha)
        resolved = Method.CHI2
    elif method == "ordinary" or (method == "auto" and active.indices.is_hyperplane):
        calib = ordinary_score_bootstrap(X, B, stream, alpha, summary)
        c, resolved = calib.critical_value, Method.ORDINARY
    else:
        calib = corrected_multiplier_bootstrap(
            X, active.indices, B, multiplier, stream, alpha, summary
        )
        c, resolved = calib.critical_value, Method.CORRECTED
    if calib is not None:
        diag["draws"] = calib.draw_summary()
    if c <= 0.0:
        # every draw was zero; the bound degenerates to the plug-in maximum
        c = np.finfo(float).tiny
    bound = simplex_lower_bound(summary, c, method=resolved, level=1.0 - alpha)
    diag.update(bound.diagnostics)
    return ConfidenceBound(
        lower=bound.lower,
        level=bound.level,
        critical_value=bound.critical_value,
        weights=bound.weights,
        face=bound.face,
        method=resolved,
        diagnostics=diag,
    )
