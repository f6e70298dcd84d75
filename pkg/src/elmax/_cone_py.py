"""Pure-Python projection kernel (fallback for the compiled ``_cone``).

Both backends solve the same problem. For a vector ``y`` of length m and a
positive definite ``S`` they compute

    min (y - u)' S^{-1} (y - u)   subject to   max_k u_k = 0

via two convex cases. If max(y) > 0 the nearest point of the level set is
the projection onto the orthant {u <= 0}; otherwise it is the best of the m
projections onto {u <= 0, u_j = 0}. Each projection is solved in its dual,
min_{lam >= 0} 1/2 lam'S lam - lam'y, by the Lawson-Hanson active-set
iteration; the primal point is u = y - S lam and the cost is lam'S lam.
"""

from __future__ import annotations

import numpy as np

_REL_TOL = 1e-11


def _solve_sub(S: np.ndarray, y: np.ndarray, passive: np.ndarray) -> np.ndarray:
    s = np.zeros_like(y)
    idx = np.flatnonzero(passive)
    if idx.size:
        s[idx] = np.linalg.solve(S[np.ix_(idx, idx)], y[idx])
    return s


def orthant_projection(y: np.ndarray, S: np.ndarray, forced: int, tol: float) -> np.ndarray:
    """Dual multipliers of the projection of y onto {u <= 0 (, u_forced = 0)}."""
    m = y.shape[0]
    passive = np.zeros(m, dtype=bool)
    lam = np.zeros(m)
    free = np.zeros(m, dtype=bool)
    if forced >= 0:
        passive[forced] = True
        free[forced] = True
        lam = _solve_sub(S, y, passive)
    for _ in range(3 * m + 10):
        u = y - S @ lam
        cand = ~passive & (u > tol)
        if not cand.any():
            break
        k = int(np.argmax(np.where(cand, u, -np.inf)))
        passive[k] = True
        for _ in range(3 * m + 10):
            s = _solve_sub(S, y, passive)
            bad = passive & ~free & (s <= 0.0)
            if not bad.any():
                lam = s
                break
            bi = np.flatnonzero(bad)
            alpha = np.min(lam[bi] / (lam[bi] - s[bi]))
            lam = lam + alpha * (s - lam)
            drop = passive & ~free & (lam <= tol * 1e-3)
            passive &= ~drop
            lam[drop] = 0.0
    return lam


def _face_key(lam: np.ndarray, forced: int) -> tuple[int, ...]:
    face = [int(k) for k in np.flatnonzero(lam > 0.0)]
    if forced >= 0 and forced not in face:
        face.append(forced)
        face.sort()
    return tuple(face)


def levelset_projection(y, S) -> tuple[float, np.ndarray, tuple[int, ...]]:
    """Squared distance, dual multipliers and face of the projection of y."""
    y = np.asarray(y, dtype=float)
    S = np.asarray(S, dtype=float)
    ymax = float(np.max(y))
    tol = _REL_TOL * (1.0 + float(np.max(np.abs(y))))
    if ymax == 0.0:
        return 0.0, np.zeros_like(y), (int(np.argmax(y)),)
    if ymax > 0.0:
        lam = orthant_projection(y, S, -1, tol)
        face = _face_key(lam, -1) or (int(np.argmax(y)),)
        return max(float(lam @ S @ lam), 0.0), lam, face
    best = None
    for j in range(y.shape[0]):
        lam = orthant_projection(y, S, j, tol)
        val = max(float(lam @ S @ lam), 0.0)
        face = _face_key(lam, j)
        key = (val, len(face), face)
        if best is None or _better(key, best[0]):
            best = (key, lam)
    (val, _, face), lam = best
    return val, lam, face


def _better(key, ref) -> bool:
    val, card, face = key
    rval, rcard, rface = ref
    if val < rval - 1e-12 * max(1.0, abs(rval)):
        return True
    if val > rval + 1e-12 * max(1.0, abs(rval)):
        return False
    return (card, face) < (rcard, rface)


def levelset_distances(Y, S) -> np.ndarray:
    """Row-wise squared distances for a batch of vectors ``Y`` (B x m)."""
    Y = np.asarray(Y, dtype=float)
    S = np.asarray(S, dtype=float)
    out = np.empty(Y.shape[0])
    if S.shape[0] == 1:
        # hyperplane: the level set is {u = 0}
        out[:] = Y[:, 0] ** 2 / S[0, 0]
        return out
    for b in range(Y.shape[0]):
        out[b] = levelset_projection(Y[b], S)[0]
    return out
