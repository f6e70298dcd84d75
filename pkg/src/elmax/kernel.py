"""Random streams, samplers, quantiles and covariance kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from elmax import _special
from elmax.errors import DegenerateCovarianceError

__all__ = [
    "RngStream",
    "ScoreMatrix",
    "ScoreSummary",
    "derive_stream",
    "sample_standard_normal",
    "sample_standardized_t5",
    "sample_centered_exponential",
    "chi2_quantile",
    "normal_quantile",
    "summarize",
    "mahalanobis_form",
]

_UINT64 = 2**64

# smallest admissible pivot of the Cholesky factor, relative to the largest variance
_PIVOT_RTOL = 1e-12


@dataclass(frozen=True)
class RngStream:
    """A random stream identified by ``(master_seed, path)``.

    The generator is seeded through :class:`numpy.random.SeedSequence` with
    the path as its spawn key, a hash-based mixing of the seed and the
    path. Two streams with the same identity replay the same sequence; the
    stream never depends on how many other streams were drawn before it.
    """

    master_seed: int
    path: tuple[int, ...] = ()
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        seed = int(self.master_seed)
        if not 0 <= seed < _UINT64:
            raise ValueError(f"master seed must be a 64-bit unsigned integer, got {seed}")
        path = tuple(int(p) for p in self.path)
        for p in path:
            if not 0 <= p < _UINT64:
                raise ValueError(f"path index out of 64-bit range: {p}")
        object.__setattr__(self, "master_seed", seed)
        object.__setattr__(self, "path", path)
        seq = np.random.SeedSequence(seed, spawn_key=path)
        object.__setattr__(self, "generator", np.random.Generator(np.random.PCG64(seq)))

    def child(self, *indices: int) -> RngStream:
        """Stream at ``path + indices``; independent of this stream's state."""
        return RngStream(self.master_seed, self.path + tuple(indices))


def derive_stream(master_seed: int, path: Sequence[int] = ()) -> RngStream:
    return RngStream(master_seed, tuple(path))


def sample_standard_normal(stream: RngStream, d: int | tuple[int, ...] = 1) -> np.ndarray:
    if isinstance(d, int) and d < 1:
        raise ValueError("dimension must be at least 1")
    return stream.generator.standard_normal(d)


def sample_standardized_t5(stream: RngStream, size=None):
    """Student-t(5) scaled by sqrt(3/5) to unit variance."""
    return stream.generator.standard_t(5, size) * math.sqrt(3.0 / 5.0)


def sample_centered_exponential(stream: RngStream, size=None):
    """Exp(1) - 1: mean 0, variance 1, support [-1, inf)."""
    return stream.generator.standard_exponential(size) - 1.0


def chi2_quantile(df: int, p: float) -> float:
    """Quantile of the chi-square law with ``df`` degrees of freedom."""
    return _special.chi2_ppf(p, df)


def normal_quantile(p: float) -> float:
    return _special.normal_ppf(p)


class ScoreMatrix:
    """Read-only n x J matrix of per-observation, per-policy scores."""

    __slots__ = ("_values",)

    def __init__(self, values) -> None:
        arr = np.array(values, dtype=float, copy=True)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError(f"scores must be a 2-d array, got shape {arr.shape}")
        n, J = arr.shape
        if n < 2 or J < 1:
            raise ValueError(f"need n >= 2 observations and J >= 1 policies, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("scores contain non-finite entries")
        arr.flags.writeable = False
        self._values = arr

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def n(self) -> int:
        return self._values.shape[0]

    @property
    def J(self) -> int:
        return self._values.shape[1]

    def __repr__(self) -> str:
        return f"ScoreMatrix(n={self.n}, J={self.J})"


def as_scores(scores) -> ScoreMatrix:
    return scores if isinstance(scores, ScoreMatrix) else ScoreMatrix(scores)


@dataclass(frozen=True)
class ScoreSummary:
    """Sample mean, 1/n covariance and its lower Cholesky factor."""

    mean: np.ndarray
    cov: np.ndarray
    n: int
    chol: np.ndarray

    @classmethod
    def from_moments(cls, mean, cov, n: int) -> ScoreSummary:
        mean = np.array(mean, dtype=float, ndmin=1)
        cov = np.array(cov, dtype=float, ndmin=2)
        J = mean.shape[0]
        if cov.shape != (J, J):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {J}")
        if n < 2:
            raise ValueError("n must be at least 2")
        cov = 0.5 * (cov + cov.T)
        chol = _cholesky(cov)
        for arr in (mean, cov, chol):
            arr.flags.writeable = False
        return cls(mean=mean, cov=cov, n=int(n), chol=chol)

    @property
    def J(self) -> int:
        return self.mean.shape[0]

    def whiten(self, z) -> np.ndarray:
        """L^{-1} z for the cached factor L (columns of a 2-d ``z`` as vectors)."""
        return solve_triangular(self.chol, z, lower=True, check_finite=False)

    def solve(self, v) -> np.ndarray:
        """S^{-1} v through the cached factor."""
        return cho_solve((self.chol, True), v, check_finite=False)

    def argmax(self) -> int:
        # np.argmax returns the smallest index among ties
        return int(np.argmax(self.mean))


def _cholesky(cov: np.ndarray) -> np.ndarray:
    scale = float(np.max(np.abs(np.diag(cov)))) if cov.size else 0.0
    if not np.all(np.isfinite(cov)) or scale <= 0.0:
        raise DegenerateCovarianceError("covariance is zero or non-finite")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovarianceError(
            "covariance is not positive definite (constant or collinear scores)"
        ) from exc
    if np.min(np.diag(chol)) ** 2 <= _PIVOT_RTOL * scale:
        raise DegenerateCovarianceError(
            "covariance is numerically singular (constant or collinear scores)"
        )
    return chol


def summarize(scores) -> ScoreSummary:
    """Mean and covariance (1/n denominator) of a score matrix."""
    X = as_scores(scores).values
    n = X.shape[0]
    mean = X.mean(axis=0)
    U = X - mean
    cov = U.T @ U / n
    return ScoreSummary.from_moments(mean, cov, n)


def mahalanobis_form(z, summary: ScoreSummary) -> float:
    """z' S^{-1} z for the summary covariance S."""
    z = np.asarray(z, dtype=float)
    if z.shape != (summary.J,):
        raise ValueError(f"expected a vector of length {summary.J}, got shape {z.shape}")
    w = summary.whiten(z)
    return float(w @ w)
