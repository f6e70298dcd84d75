"""Observational policy-evaluation pipeline producing AIPW score matrices.

Synthetic data with known nuisances, linear threshold policies, a
ridge-penalized baseline learner and cross-fitted doubly robust scores.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from elmax.errors import FitError, GenerationError
from elmax.kernel import RngStream, ScoreMatrix

__all__ = [
    "PolicyDataset",
    "PolicyClass",
    "NuisanceFit",
    "PolicyValues",
    "true_propensity",
    "baseline_outcome",
    "treatment_effect",
    "gen_semiparametric_data",
    "make_policy_class",
    "random_policy_class",
    "true_policy_values",
    "fit_baseline_nuisance",
    "oracle_nuisance",
    "aipw_scores",
    "cross_fit_scores",
]

N_COVARIATES = 6
CLIP = (0.1, 0.9)


@dataclass(frozen=True)
class PolicyDataset:
    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray

    def __post_init__(self) -> None:
        W = np.asarray(self.covariates, dtype=float)
        A = np.asarray(self.treatment).astype(np.int8)
        Y = np.asarray(self.outcome, dtype=float)
        if W.ndim != 2 or W.shape[1] != N_COVARIATES:
            raise ValueError(f"covariates must be n x {N_COVARIATES}, got {W.shape}")
        n = W.shape[0]
        if A.shape != (n,) or Y.shape != (n,):
            raise ValueError("treatment and outcome must have one entry per row")
        if not np.all(np.isin(A, (0, 1))):
            raise ValueError("treatment must be binary")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "covariates", W)
        object.__setattr__(self, "treatment", A)
        object.__setattr__(self, "outcome", Y)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    def take(self, idx) -> PolicyDataset:
        return PolicyDataset(self.covariates[idx], self.treatment[idx], self.outcome[idx])


@dataclass(frozen=True)
class PolicyClass:
    """Linear threshold rules pi_j(w) = 1[beta_j' w_{1:3} + b_j > 0]."""

    weights: np.ndarray
    offsets: np.ndarray

    @property
    def J(self) -> int:
        return self.weights.shape[0]

    def actions(self, W) -> np.ndarray:
        W = np.asarray(W, dtype=float)
        return (W[:, :3] @ self.weights.T + self.offsets > 0.0).astype(np.int8)


@dataclass(frozen=True)
class PolicyValues:
    values: np.ndarray
    std_error: np.ndarray
    mc_draws: int


def true_propensity(W) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    lin = (
        0.6 * W[:, 0]
        - 0.5 * W[:, 1]
        + 0.3 * W[:, 2] * W[:, 3]
        - 0.2 * (W[:, 4] ** 2 - 1.0)
        + 0.15 * np.sin(W[:, 5])
    )
    return np.clip(expit(lin), *CLIP)


def baseline_outcome(W) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    return (
        0.5 * W[:, 0]
        - 0.3 * W[:, 1]
        + 0.2 * W[:, 2] ** 2
        - 0.15 * W[:, 3] * W[:, 4]
        + 0.2 * np.cos(W[:, 5])
    )


def treatment_effect(W) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    return (
        0.6 * np.sin(W[:, 0])
        + 0.4 * (W[:, 1] > 0)
        - 0.3 * W[:, 2]
        + 0.2 * W[:, 0] * W[:, 1]
    )


def gen_semiparametric_data(n: int, stream: RngStream) -> PolicyDataset:
    if n < 1:
        raise ValueError("n must be positive")
    g = stream.generator
    W = g.standard_normal((n, N_COVARIATES))
    A = (g.random(n) < true_propensity(W)).astype(np.int8)
    Y = baseline_outcome(W) + A * treatment_effect(W) + g.standard_normal(n)
    return PolicyDataset(W, A, Y)


# ------------------------------------------------------------ policy values


class _MonteCarloGrid:
    """Covariate draws with precomputed baseline and effect, reused across policies."""

    def __init__(self, mc_draws: int, stream: RngStream, chunk: int = 500_000):
        self.front = np.empty((mc_draws, 3))
        self.base = np.empty(mc_draws)
        self.effect = np.empty(mc_draws)
        for c, start in enumerate(range(0, mc_draws, chunk)):
            stop = min(mc_draws, start + chunk)
            W = stream.child(c).generator.standard_normal((stop - start, N_COVARIATES))
            self.front[start:stop] = W[:, :3]
            self.base[start:stop] = baseline_outcome(W)
            self.effect[start:stop] = treatment_effect(W)

    def value(self, beta, b) -> float:
        treat = self.front @ beta + b > 0.0
        return float(self.base.mean() + self.effect[treat].sum() / self.base.size)

    def values(self, policies: PolicyClass) -> PolicyValues:
        vals = np.empty(policies.J)
        ses = np.empty(policies.J)
        m = self.base.size
        for j in range(policies.J):
            y = self.base + (self.front @ policies.weights[j] + policies.offsets[j] > 0) * self.effect
            vals[j] = y.mean()
            ses[j] = y.std() / np.sqrt(m)
        return PolicyValues(vals, ses, m)


def true_policy_values(policies: PolicyClass, mc_draws: int, stream: RngStream) -> PolicyValues:
    """Monte Carlo integration of each policy value under the known data law."""
    if mc_draws < 1:
        raise ValueError("mc_draws must be positive")
    return _MonteCarloGrid(int(mc_draws), stream).values(policies)


ANCHOR_WEIGHTS = np.array([0.6, 0.4, -0.3])
ANCHOR_OFFSET = 0.2


def make_policy_class(
    J: int,
    n_near_tied: int,
    stream: RngStream,
    mc_draws: int = 2_000_000,
    tie_tol: float = 0.01,
    margin: float = 0.05,
    attenuation: float = 0.3,
    max_tries: int = 2000,
) -> PolicyClass:
    """Anchor rule, ``n_near_tied - 1`` perturbations within ``tie_tol`` of it,
    and attenuated random rules at least ``margin`` below the best.

    Near-tied candidates are accepted when their value is within
    ``tie_tol / 2`` of the anchor, so the whole group spans less than
    ``tie_tol``. The perturbation scale halves after every 100 rejections.
    """
    if not 1 <= n_near_tied <= J:
        raise ValueError("need 1 <= n_near_tied <= J")
    grid = _MonteCarloGrid(int(mc_draws), stream.child(0))
    g = stream.child(1).generator
    betas = [ANCHOR_WEIGHTS.copy()]
    offsets = [ANCHOR_OFFSET]
    anchor_value = grid.value(ANCHOR_WEIGHTS, ANCHOR_OFFSET)
    values = [anchor_value]
    scale = 0.3
    tries = 0
    while len(betas) < n_near_tied:
        tries += 1
        if tries > max_tries:
            raise GenerationError("could not calibrate near-tied policies")
        if tries % 100 == 0:
            scale *= 0.5
        beta = ANCHOR_WEIGHTS + scale * g.standard_normal(3)
        b = ANCHOR_OFFSET + scale * g.standard_normal()
        v = grid.value(beta, b)
        if abs(v - anchor_value) < 0.5 * tie_tol:
            betas.append(beta)
            offsets.append(b)
            values.append(v)
    best = max(values)
    tries = 0
    while len(betas) < J:
        tries += 1
        if tries > max_tries:
            raise GenerationError("could not draw clearly suboptimal policies")
        beta = attenuation * g.standard_normal(3)
        b = attenuation * g.standard_normal()
        if grid.value(beta, b) <= best - margin:
            betas.append(beta)
            offsets.append(b)
    return PolicyClass(np.array(betas), np.array(offsets, dtype=float))


def random_policy_class(J: int, stream: RngStream, scale: float = 1.0) -> PolicyClass:
    g = stream.generator
    return PolicyClass(scale * g.standard_normal((J, 3)), scale * g.standard_normal(J))


# ------------------------------------------------------------ nuisance models


class NuisanceFit:
    """Propensity and per-arm outcome regressions; propensity is clipped."""

    def __init__(
        self,
        propensity: Callable[[np.ndarray], np.ndarray],
        outcome0: Callable[[np.ndarray], np.ndarray],
        outcome1: Callable[[np.ndarray], np.ndarray],
        clip: tuple[float, float] = CLIP,
    ):
        self._propensity = propensity
        self.outcome0 = outcome0
        self.outcome1 = outcome1
        self.clip = clip

    def propensity(self, W) -> np.ndarray:
        return np.clip(self._propensity(W), *self.clip)


def quadratic_features(W) -> np.ndarray:
    """Raw covariates, their squares and pairwise products (no intercept)."""
    W = np.asarray(W, dtype=float)
    i, j = np.triu_indices(W.shape[1], k=1)
    return np.hstack([W, W**2, W[:, i] * W[:, j]])


class _Standardizer:
    def __init__(self, F: np.ndarray):
        self.mu = F.mean(axis=0)
        sd = F.std(axis=0)
        self.sd = np.where(sd > 0, sd, 1.0)

    def __call__(self, F: np.ndarray) -> np.ndarray:
        return (F - self.mu) / self.sd


def _ridge_logistic(F, a, ridge, tol=1e-8, max_iter=100):
    n, p = F.shape
    Z = np.hstack([np.ones((n, 1)), F])
    coef = np.zeros(p + 1)
    pen = np.full(p + 1, ridge)
    pen[0] = 0.0
    for _ in range(max_iter):
        prob = expit(Z @ coef)
        grad = Z.T @ (prob - a) + pen * coef
        wts = prob * (1.0 - prob)
        hess = (Z * wts[:, None]).T @ Z + np.diag(pen)
        # tiny jitter keeps the intercept solvable under complete separation
        hess[0, 0] += 1e-10
        step = np.linalg.solve(hess, grad)
        coef -= step
        if np.max(np.abs(step)) < tol:
            break
    return coef


def _ridge_linear(F, y, ridge):
    mu = y.mean()
    p = F.shape[1]
    Fc = F - F.mean(axis=0)
    coef = np.linalg.solve(Fc.T @ Fc + ridge * np.eye(p), Fc.T @ (y - mu))
    intercept = mu - F.mean(axis=0) @ coef
    return intercept, coef


def fit_baseline_nuisance(train: PolicyDataset, ridge: float = 1.0) -> NuisanceFit:
    """Ridge logistic propensity and per-arm ridge regressions on quadratic features."""
    if train.n == 0:
        raise FitError("empty training set")
    A = train.treatment
    if A.min() == A.max():
        raise FitError(f"training data contain only treatment arm {int(A[0])}")
    F = quadratic_features(train.covariates)
    std = _Standardizer(F)
    Fs = std(F)
    prop_coef = _ridge_logistic(Fs, A.astype(float), ridge)
    arms = {}
    for arm in (0, 1):
        mask = A == arm
        arms[arm] = _ridge_linear(Fs[mask], train.outcome[mask], ridge)

    def propensity(W):
        Fw = std(quadratic_features(W))
        return expit(prop_coef[0] + Fw @ prop_coef[1:])

    def outcome(arm):
        intercept, coef = arms[arm]
        return lambda W: intercept + std(quadratic_features(W)) @ coef

    return NuisanceFit(propensity, outcome(0), outcome(1))


def oracle_nuisance() -> NuisanceFit:
    """The true nuisance functions of the synthetic data law."""
    return NuisanceFit(
        true_propensity,
        baseline_outcome,
        lambda W: baseline_outcome(W) + treatment_effect(W),
    )


# ------------------------------------------------------------ scores


def aipw_scores(data: PolicyDataset, policies: PolicyClass, fit: NuisanceFit) -> np.ndarray:
    """Doubly robust pseudo-outcomes, one column per policy."""
    W, A, Y = data.covariates, data.treatment, data.outcome
    e1 = fit.propensity(W)
    m0 = fit.outcome0(W)
    m1 = fit.outcome1(W)
    pi = policies.actions(W).astype(bool)
    m_pi = np.where(pi, m1[:, None], m0[:, None])
    e_pi = np.where(pi, e1[:, None], 1.0 - e1[:, None])
    m_obs = np.where(A == 1, m1, m0)
    match = pi == (A == 1)[:, None]
    return m_pi + match / e_pi * (Y - m_obs)[:, None]


def fold_labels(data: PolicyDataset, folds: int, stream: RngStream) -> np.ndarray:
    """Balanced fold labels that follow each row under any permutation.

    Rows are ranked by a salted hash of their contents and dealt round-robin.
    """
    salt = stream.generator.bytes(16)
    keys = []
    for i in range(data.n):
        h = hashlib.blake2b(salt, digest_size=8)
        h.update(data.covariates[i].tobytes())
        h.update(bytes([int(data.treatment[i])]))
        h.update(np.float64(data.outcome[i]).tobytes())
        keys.append(int.from_bytes(h.digest(), "little"))
    order = np.argsort(np.array(keys, dtype=np.uint64), kind="stable")
    labels = np.empty(data.n, dtype=np.int64)
    labels[order] = np.arange(data.n) % folds
    return labels


def cross_fit_scores(
    data: PolicyDataset,
    policies: PolicyClass,
    folds: int = 2,
    factory: Callable[[PolicyDataset], NuisanceFit] = fit_baseline_nuisance,
    stream: RngStream | None = None,
) -> ScoreMatrix:
    """AIPW scores with each fold scored by nuisances fit on the other folds."""
    if folds < 2:
        raise ValueError("cross-fitting needs at least two folds")
    if stream is None:
        raise ValueError("a random stream is required for fold assignment")
    labels = fold_labels(data, folds, stream)
    out = np.empty((data.n, policies.J))
    for k in range(folds):
        test = np.flatnonzero(labels == k)
        train = np.flatnonzero(labels != k)
        fit = factory(data.take(train))
        out[test] = aipw_scores(data.take(test), policies, fit)
    return ScoreMatrix(out)
