"""Mahalanobis projections onto level sets of the coordinate maximum.

The level set ``M_tau = {m : max_j m_j = tau}`` is a union of faces
``{m : m_j = tau for j in A}``. :func:`profile_stat_max` and
:func:`distance_to_cone` find the cheapest feasible face with a polynomial
active-set solver (see :mod:`elmax._cone_py`); passing
``method="enumerate"`` walks all ``2^|A| - 1`` faces instead and serves as
the reference oracle.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from elmax import _backend
from elmax.kernel import ScoreSummary

__all__ = [
    "ConeSpec",
    "FaceProjection",
    "project_onto_face",
    "profile_stat_max",
    "distance_to_hyperplane",
    "distance_to_cone",
    "cone_distances",
]

FEASIBILITY_TOL = 1e-9
TIE_TOL = 1e-12
MAX_ENUMERATION = 12


@dataclass(frozen=True)
class ConeSpec:
    """Active policy indices and the ambient dimension.

    A single index describes the hyperplane ``{v : v_j = 0}``; several
    describe the cone ``{v : max_{j in active} v_j = 0}``.
    """

    active: tuple[int, ...]
    ambient_dim: int

    def __post_init__(self) -> None:
        active = tuple(int(j) for j in self.active)
        if not active:
            raise ValueError("active set must be nonempty")
        if any(b <= a for a, b in zip(active, active[1:])):
            raise ValueError(f"active indices must be strictly increasing: {active}")
        if active[0] < 0 or active[-1] >= self.ambient_dim:
            raise ValueError(f"active indices out of range for dimension {self.ambient_dim}")
        object.__setattr__(self, "active", active)

    @classmethod
    def from_indices(cls, indices: Iterable[int], ambient_dim: int) -> ConeSpec:
        return cls(tuple(sorted(set(int(j) for j in indices))), int(ambient_dim))

    @property
    def is_hyperplane(self) -> bool:
        return len(self.active) == 1


@dataclass(frozen=True)
class FaceProjection:
    face: tuple[int, ...]
    point: np.ndarray
    cost: float
    feasible: bool


def _check_face(A: Sequence[int], J: int) -> tuple[int, ...]:
    face = tuple(sorted(set(int(j) for j in A)))
    if not face:
        raise ValueError("face index set must be nonempty")
    if face[0] < 0 or face[-1] >= J:
        raise ValueError(f"face indices out of range for dimension {J}")
    return face


def project_onto_face(summary: ScoreSummary, A: Sequence[int], tau: float) -> FaceProjection:
    """Projection of the score mean onto ``{m : m_j = tau, j in A}``.

    The cost carries the factor ``n``.
    """
    face = _check_face(A, summary.J)
    idx = list(face)
    resid = summary.mean[idx] - tau
    lam = np.linalg.solve(summary.cov[np.ix_(idx, idx)], resid)
    point = summary.mean - summary.cov[:, idx] @ lam
    point[idx] = tau
    cost = summary.n * float(resid @ lam)
    rest = np.setdiff1d(np.arange(summary.J), idx)
    limit = tau + FEASIBILITY_TOL * (1.0 + abs(tau))
    feasible = bool(np.all(point[rest] <= limit))
    return FaceProjection(face=face, point=point, cost=max(cost, 0.0), feasible=feasible)


def _pick(candidates: Iterable[tuple[float, tuple[int, ...]]]) -> tuple[float, tuple[int, ...]]:
    """Cheapest face; near-ties go to the smaller, then lexicographically first, face."""
    cands = list(candidates)
    if not cands:
        raise RuntimeError("no feasible face found")
    best = min(c[0] for c in cands)
    close = [c for c in cands if c[0] <= best + TIE_TOL * max(1.0, abs(best))]
    return min(close, key=lambda c: (len(c[1]), c[1]))


def _subsets(items: Sequence[int]):
    for r in range(1, len(items) + 1):
        yield from itertools.combinations(items, r)


def _enumerate_profile(summary: ScoreSummary, tau: float) -> tuple[float, tuple[int, ...]]:
    if summary.J > MAX_ENUMERATION:
        raise ValueError(f"enumeration is limited to J <= {MAX_ENUMERATION}")
    cands = []
    for A in _subsets(range(summary.J)):
        proj = project_onto_face(summary, A, tau)
        if proj.feasible:
            cands.append((proj.cost, proj.face))
    return _pick(cands)


def profile_stat_max(
    summary: ScoreSummary, tau: float, method: str = "active-set"
) -> tuple[float, tuple[int, ...]]:
    """``n`` times the squared distance from the mean to ``{max_j m_j = tau}``.

    Returns the value and the minimizing face.
    """
    if method == "enumerate":
        return _enumerate_profile(summary, float(tau))
    if method != "active-set":
        raise ValueError(f"unknown method {method!r}")
    value, _, face = _backend.levelset_projection(summary.mean - float(tau), summary.cov)
    return summary.n * value, tuple(int(j) for j in face)


def levelset_point(summary: ScoreSummary, tau: float) -> tuple[float, np.ndarray, tuple[int, ...]]:
    """Like :func:`profile_stat_max` but also returns the projection point."""
    value, lam, face = _backend.levelset_projection(summary.mean - float(tau), summary.cov)
    point = summary.mean - summary.cov @ np.asarray(lam)
    point[list(face)] = tau
    return summary.n * value, point, tuple(int(j) for j in face)


def distance_to_hyperplane(z, summary: ScoreSummary, a0) -> float:
    """(a0'z)^2 / (a0' S a0): squared distance to ``{v : a0'v = 0}``."""
    z = np.asarray(z, dtype=float)
    a0 = np.asarray(a0, dtype=float)
    if z.shape != (summary.J,) or a0.shape != (summary.J,):
        raise ValueError("dimension mismatch")
    if not np.any(a0):
        raise ValueError("normal vector must be nonzero")
    return float((a0 @ z) ** 2 / (a0 @ summary.cov @ a0))


def _enumerate_cone(z: np.ndarray, cov: np.ndarray, active: Sequence[int]):
    if len(active) > MAX_ENUMERATION:
        raise ValueError(f"enumeration is limited to {MAX_ENUMERATION} active indices")
    cands = []
    for A in _subsets(active):
        idx = list(A)
        lam = np.linalg.solve(cov[np.ix_(idx, idx)], z[idx])
        v = z - cov[:, idx] @ lam
        rest = [k for k in active if k not in A]
        if all(v[k] <= FEASIBILITY_TOL for k in rest):
            cands.append((max(float(z[idx] @ lam), 0.0), tuple(A)))
    return _pick(cands)


def distance_to_cone(
    z, summary: ScoreSummary, cone: ConeSpec, method: str = "active-set"
) -> tuple[float, tuple[int, ...]]:
    """Squared Mahalanobis distance from ``z`` to ``{v : max_{j in active} v_j = 0}``.

    Coordinates outside the active set are unconstrained, so the problem
    reduces to the active block with covariance ``S[active, active]``. No
    factor ``n`` is applied.
    """
    z = np.asarray(z, dtype=float)
    if cone.ambient_dim != summary.J or z.shape != (summary.J,):
        raise ValueError("dimension mismatch between z, summary and cone")
    if method == "enumerate":
        return _enumerate_cone(z, summary.cov, cone.active)
    if method != "active-set":
        raise ValueError(f"unknown method {method!r}")
    idx = list(cone.active)
    value, _, face = _backend.levelset_projection(z[idx], summary.cov[np.ix_(idx, idx)])
    return value, tuple(idx[j] for j in face)


def cone_distances(Z, summary: ScoreSummary, cone: ConeSpec) -> np.ndarray:
    """Vectorized :func:`distance_to_cone` values over the rows of ``Z``."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[1] != summary.J or cone.ambient_dim != summary.J:
        raise ValueError("dimension mismatch between Z, summary and cone")
    idx = list(cone.active)
    block = np.ascontiguousarray(summary.cov[np.ix_(idx, idx)])
    return np.asarray(_backend.levelset_distances(np.ascontiguousarray(Z[:, idx]), block))
