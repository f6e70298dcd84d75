"""Score-level data generators, the Monte Carlo coverage runner and timing runs."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from elmax.calibration import (
    corrected_multiplier_bootstrap,
    estimate_active_set,
    infer_lower_bound,
    order_statistic,
)
from elmax.kernel import (
    RngStream,
    ScoreMatrix,
    sample_centered_exponential,
    sample_standardized_t5,
    summarize,
)
from elmax.policy import (
    PolicyClass,
    cross_fit_scores,
    fit_baseline_nuisance,
    gen_semiparametric_data,
    make_policy_class,
    random_policy_class,
    true_policy_values,
)

__all__ = [
    "EXPERIMENTS",
    "ExperimentConfig",
    "MethodSummary",
    "MonteCarloResult",
    "TimingReport",
    "dimension_means",
    "dimension_covariance",
    "gen_scores_dimension",
    "gen_scores_ties",
    "gen_scores_correlation",
    "run_experiment",
    "timing_experiment",
    "per_draw_scaling",
]

EXPERIMENTS = ("dimension", "ties", "correlation", "semiparametric")

OPTIMUM = 0.35
SUBOPTIMAL_TOP = 0.20
CORR_TIED = 0.30
CORR_OTHER = 0.10

DEFAULT_METHODS = {
    "dimension": ("auto", "joint", "wald"),
    "ties": ("auto", "joint", "wald"),
    "correlation": ("auto", "joint", "wald", "fs"),
    "semiparametric": ("auto", "joint", "wald"),
}

# top-level stream indices
_REPS, _CLASS, _TRUTH = 0, 1, 2


# ------------------------------------------------------------ generators


def dimension_means(J: int, k: int = 1) -> np.ndarray:
    """First ``k`` coordinates at 0.35; the rest fall linearly from 0.20 to 0.0."""
    if J < 2:
        raise ValueError("J must be at least 2")
    if not 1 <= k <= J:
        raise ValueError("need 1 <= k <= J")
    j = np.arange(1, J + 1)
    theta = SUBOPTIMAL_TOP - 0.2 * (j - 2) / max(J - 2, 1)
    theta[:k] = OPTIMUM
    return theta


def dimension_covariance(J: int) -> np.ndarray:
    j = np.arange(J)
    v = 1.0 - 0.3 * j / (J - 1)
    corr = 0.5 ** np.abs(j[:, None] - j[None, :]) + 0.15
    return corr * np.sqrt(np.outer(v, v)) / 1.15


def gen_scores_ties(n: int, J: int, k: int, stream: RngStream) -> tuple[ScoreMatrix, np.ndarray]:
    """theta + 0.70 G + 0.20 E + 0.10 S b with Gaussian, t5 and exponential parts."""
    theta = dimension_means(J, k)
    L = np.linalg.cholesky(dimension_covariance(J))
    G = stream.child(0).generator.standard_normal((n, J)) @ L.T
    E = sample_standardized_t5(stream.child(1), (n, J))
    S = sample_centered_exponential(stream.child(2), n)
    b = 1.0 - 0.5 * np.arange(J) / (J - 1)
    X = theta + 0.70 * G + 0.20 * E + 0.10 * S[:, None] * b
    return ScoreMatrix(X), theta


def gen_scores_dimension(n: int, J: int, stream: RngStream) -> tuple[ScoreMatrix, np.ndarray]:
    return gen_scores_ties(n, J, 1, stream)


def correlation_means(J: int, k: int) -> np.ndarray:
    theta = np.full(J, CORR_OTHER)
    theta[:k] = CORR_TIED
    return theta


def gen_scores_correlation(
    n: int, J: int, k: int, rho: float, stream: RngStream
) -> tuple[ScoreMatrix, np.ndarray]:
    """Gaussian scores; the first ``k`` equi-correlated at ``rho``, the rest independent."""
    if not 1 <= k <= J:
        raise ValueError("need 1 <= k <= J")
    lo = -1.0 / (k - 1) if k > 1 else -1.0
    if not lo < rho < 1.0:
        raise ValueError(f"rho={rho} outside the positive-definite range ({lo:g}, 1)")
    block = np.full((k, k), rho)
    np.fill_diagonal(block, 1.0)
    L = np.linalg.cholesky(block)
    Z = stream.child(0).generator.standard_normal((n, J))
    Z[:, :k] = Z[:, :k] @ L.T
    theta = correlation_means(J, k)
    return ScoreMatrix(theta + Z), theta


# ------------------------------------------------------------ experiments


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    n: int = 500
    J: int = 10
    k: int = 1
    rho: float = 0.0
    reps: int = 300
    B: int = 1000
    alpha: float = 0.05
    multiplier: str = "gaussian"
    master_seed: int = 0
    methods: tuple[str, ...] = ()
    mc_draws: int = 2_000_000
    folds: int = 2
    ridge: float = 1.0

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if not self.methods:
            object.__setattr__(self, "methods", DEFAULT_METHODS[self.experiment])
        object.__setattr__(self, "methods", tuple(self.methods))
        checks = [
            (self.n >= 2, "n must be at least 2"),
            (self.J >= 2, "J must be at least 2"),
            (1 <= self.k <= self.J, "need 1 <= k <= J"),
            (self.reps >= 1, "reps must be at least 1"),
            (self.B >= 1, "B must be at least 1"),
            (0.0 < self.alpha < 1.0, "alpha must lie in (0, 1)"),
            (self.multiplier in ("gaussian", "rademacher"), "unknown multiplier"),
            (0 <= self.master_seed < 2**64, "seed must be a 64-bit unsigned integer"),
            (self.mc_draws >= 1, "mc_draws must be positive"),
            (self.folds >= 2, "folds must be at least 2"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        if self.experiment == "correlation":
            lo = -1.0 / (self.k - 1) if self.k > 1 else -1.0
            if not lo < self.rho < 1.0:
                raise ValueError(f"rho={self.rho} outside ({lo:g}, 1)")
        valid = ("auto", "chi2", "ordinary", "corrected", "joint", "wald", "fs")
        for m in self.methods:
            if m not in valid:
                raise ValueError(f"unknown method {m!r}")

    @property
    def theta0(self) -> np.ndarray | None:
        """Score-level truth; None for the semiparametric experiment."""
        if self.experiment in ("dimension", "ties"):
            return dimension_means(self.J, self.k if self.experiment == "ties" else 1)
        if self.experiment == "correlation":
            return correlation_means(self.J, self.k)
        return None

    @property
    def tau0(self) -> float | None:
        theta = self.theta0
        return None if theta is None else float(np.max(theta))

    @property
    def gap0(self) -> float | None:
        theta = self.theta0
        if theta is None:
            return None
        below = theta[theta < np.max(theta)]
        return float(np.max(theta) - np.max(below)) if below.size else math.inf

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["methods"] = list(self.methods)
        return d


@dataclass(frozen=True)
class MethodSummary:
    coverage: float
    mean_shortfall: float
    mean_critical_value: float
    mean_active_size: float
    reps: int


@dataclass(frozen=True)
class MonteCarloResult:
    config: ExperimentConfig
    tau0: float
    tau0_se: float
    methods: dict[str, MethodSummary]
    # reps x methods x (lower, critical value, |J_hat|)
    records: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class _Context:
    policies: PolicyClass | None = None


def _rep_scores(config: ExperimentConfig, stream: RngStream, ctx: _Context) -> ScoreMatrix:
    if config.experiment == "dimension":
        return gen_scores_dimension(config.n, config.J, stream.child(0))[0]
    if config.experiment == "ties":
        return gen_scores_ties(config.n, config.J, config.k, stream.child(0))[0]
    if config.experiment == "correlation":
        return gen_scores_correlation(config.n, config.J, config.k, config.rho, stream.child(0))[0]
    data = gen_semiparametric_data(config.n, stream.child(0))
    return cross_fit_scores(
        data,
        ctx.policies,
        folds=config.folds,
        factory=lambda tr: fit_baseline_nuisance(tr, config.ridge),
        stream=stream.child(2),
    )


def _run_rep(config: ExperimentConfig, ctx: _Context, rep: int) -> np.ndarray:
    """Bounds for one repetition; depends only on (master_seed, rep)."""
    stream = RngStream(config.master_seed, (_REPS, rep))
    X = _rep_scores(config, stream, ctx)
    summary = summarize(X)
    out = np.empty((len(config.methods), 3))
    for i, method in enumerate(config.methods):
        bound = infer_lower_bound(
            X,
            alpha=config.alpha,
            method=method,
            B=config.B,
            multiplier=config.multiplier,
            stream=stream.child(1),
            summary=summary,
        )
        active = bound.diagnostics.get("active_set", bound.face)
        out[i] = (bound.lower, bound.critical_value, len(active))
    return out


def _run_chunk(args) -> list[np.ndarray]:
    config, ctx, reps = args
    return [_run_rep(config, ctx, r) for r in reps]


def _semiparametric_context(config: ExperimentConfig) -> tuple[_Context, float, float]:
    root = RngStream(config.master_seed)
    policies = make_policy_class(config.J, config.k, root.child(_CLASS), mc_draws=config.mc_draws)
    truth = true_policy_values(policies, config.mc_draws, root.child(_TRUTH))
    j = int(np.argmax(truth.values))
    return _Context(policies), float(truth.values[j]), float(truth.std_error[j])


def run_experiment(
    config: ExperimentConfig, workers: int = 1, keep_records: bool = False
) -> MonteCarloResult:
    """Coverage of tau0 and shortfall for every requested method.

    Repetitions are independent jobs; with ``workers > 1`` they are spread
    over processes and reassembled by repetition index, so the result does
    not depend on the worker count.
    """
    if workers < 1:
        raise ValueError("workers must be at least 1")
    if config.experiment == "semiparametric":
        ctx, tau0, tau0_se = _semiparametric_context(config)
    else:
        ctx, tau0, tau0_se = _Context(), config.tau0, 0.0

    reps = list(range(config.reps))
    if workers == 1:
        rows = [_run_rep(config, ctx, r) for r in reps]
    else:
        size = max(1, math.ceil(len(reps) / (4 * workers)))
        chunks = [reps[i : i + size] for i in range(0, len(reps), size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            # map preserves submission order, so chunks come back by rep index
            rows = [row for part in pool.map(_run_chunk, [(config, ctx, c) for c in chunks]) for row in part]
    records = np.stack(rows)

    summaries = {}
    for i, method in enumerate(config.methods):
        lower = records[:, i, 0]
        summaries[method] = MethodSummary(
            coverage=float(np.mean(lower <= tau0)),
            mean_shortfall=float(np.mean(tau0 - lower)),
            mean_critical_value=float(np.mean(records[:, i, 1])),
            mean_active_size=float(np.mean(records[:, i, 2])),
            reps=config.reps,
        )
    return MonteCarloResult(
        config=config,
        tau0=tau0,
        tau0_se=tau0_se,
        methods=summaries,
        records=records if keep_records else None,
    )


# ------------------------------------------------------------ timing


@dataclass(frozen=True)
class TimingReport:
    n: int
    J: int
    B: int
    reps: int
    score_level_seconds: float
    refit_seconds: float

    @property
    def score_level_per_draw(self) -> float:
        return self.score_level_seconds / self.B

    @property
    def refit_per_draw(self) -> float:
        return self.refit_seconds / self.B

    @property
    def ratio(self) -> float:
        return self.refit_seconds / self.score_level_seconds


def _timing_setup(n: int, J: int, stream: RngStream):
    data = gen_semiparametric_data(n, stream.child(0))
    policies = random_policy_class(J, stream.child(1))
    scores = cross_fit_scores(data, policies, stream=stream.child(2))
    return data, policies, scores


def _score_level_arm(scores: ScoreMatrix, B: int, stream: RngStream) -> float:
    summary = summarize(scores)
    cone = estimate_active_set(summary).indices
    return corrected_multiplier_bootstrap(scores, cone, B, stream=stream, summary=summary).critical_value


def _refit_arm(data, policies, B: int, stream: RngStream, fold_stream: RngStream) -> float:
    """Plug-in bootstrap of the maximum, refitting nuisances on every resample."""
    n = data.n
    draws = np.empty(B)
    for b in range(B):
        idx = stream.child(b).generator.integers(0, n, size=n)
        X = cross_fit_scores(data.take(idx), policies, stream=fold_stream).values
        draws[b] = float(np.max(X.mean(axis=0)))
    return order_statistic(draws, 0.05)


def timing_experiment(n: int, J: int, B: int, reps: int, stream: RngStream) -> TimingReport:
    """Wall-clock of the score-level bootstrap against refit-per-resample.

    Both arms share the data, the policy class and the per-draw random
    streams; only the refitting differs. Each arm reports its median over
    ``reps`` runs.
    """
    if n < 10 or J < 1 or B < 1 or reps < 1:
        raise ValueError("invalid timing sizes")
    data, policies, scores = _timing_setup(n, J, stream)
    draw_stream = stream.child(3)
    fast, slow = [], []
    for _ in range(reps):
        t0 = time.perf_counter()
        _score_level_arm(scores, B, draw_stream)
        fast.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        _refit_arm(data, policies, B, draw_stream, stream.child(2))
        slow.append(time.perf_counter() - t0)
    return TimingReport(
        n=n, J=J, B=B, reps=reps,
        score_level_seconds=float(np.median(fast)),
        refit_seconds=float(np.median(slow)),
    )


def per_draw_scaling(grid, B: int, stream: RngStream, reps: int = 3) -> dict[str, Any]:
    """Score-level per-draw cost over (n, J) cells and its fit to c * n * J.

    Returns the cells, the least-squares slope through the origin and the
    largest ratio between observed and fitted cost, in either direction.
    """
    cells = []
    for n, J in grid:
        _, _, scores = _timing_setup(n, J, stream.child(n, J))
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            _score_level_arm(scores, B, stream.child(n, J, 3))
            times.append((time.perf_counter() - t0) / B)
        cells.append((n, J, float(np.median(times))))
    size = np.array([n * J for n, J, _ in cells], dtype=float)
    cost = np.array([c for _, _, c in cells])
    slope = float(size @ cost / (size @ size))
    fitted = slope * size
    dev = float(np.max(np.maximum(cost / fitted, fitted / cost)))
    return {"cells": cells, "slope": slope, "max_deviation": dev}

