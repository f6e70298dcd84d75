# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled projection kernel; mirrors :mod:`elmax._cone_py` step for step."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double REL_TOL = 1e-11
cdef double TIE_TOL = 1e-12


cdef struct Work:
    double* K       # m*m scratch for the passive block
    double* rhs     # m
    double* s       # m, candidate multipliers
    double* u       # m, primal residual y - S lam
    double* lam     # m, current multipliers
    int* passive    # m flags
    int* idx        # m passive indices


cdef int _alloc(Work* w, int m) except -1:
    w.K = <double*> malloc(m * m * sizeof(double))
    w.rhs = <double*> malloc(m * sizeof(double))
    w.s = <double*> malloc(m * sizeof(double))
    w.u = <double*> malloc(m * sizeof(double))
    w.lam = <double*> malloc(m * sizeof(double))
    w.passive = <int*> malloc(m * sizeof(int))
    w.idx = <int*> malloc(m * sizeof(int))
    if (w.K == NULL or w.rhs == NULL or w.s == NULL or w.u == NULL
            or w.lam == NULL or w.passive == NULL or w.idx == NULL):
        _release(w)
        raise MemoryError()
    return 0


cdef void _release(Work* w) noexcept:
    free(w.K); free(w.rhs); free(w.s); free(w.u); free(w.lam)
    free(w.passive); free(w.idx)


cdef int _solve_sub(const double* S, const double* y, int m, Work* w) noexcept nogil:
    """s[P] = S[P,P]^{-1} y[P], zero elsewhere, by a Cholesky solve."""
    cdef int p = 0, i, j, k
    cdef double acc
    for i in range(m):
        w.s[i] = 0.0
        if w.passive[i]:
            w.idx[p] = i
            p += 1
    if p == 0:
        return 0
    for i in range(p):
        w.rhs[i] = y[w.idx[i]]
        for j in range(p):
            w.K[i * p + j] = S[w.idx[i] * m + w.idx[j]]
    # in-place lower Cholesky
    for j in range(p):
        acc = w.K[j * p + j]
        for k in range(j):
            acc -= w.K[j * p + k] * w.K[j * p + k]
        if acc <= 0.0:
            return -1
        acc = sqrt(acc)
        w.K[j * p + j] = acc
        for i in range(j + 1, p):
            for k in range(j):
                w.K[i * p + j] -= w.K[i * p + k] * w.K[j * p + k]
            w.K[i * p + j] /= acc
    # forward then backward substitution
    for i in range(p):
        acc = w.rhs[i]
        for k in range(i):
            acc -= w.K[i * p + k] * w.rhs[k]
        w.rhs[i] = acc / w.K[i * p + i]
    for i in range(p - 1, -1, -1):
        acc = w.rhs[i]
        for k in range(i + 1, p):
            acc -= w.K[k * p + i] * w.rhs[k]
        w.rhs[i] = acc / w.K[i * p + i]
    for i in range(p):
        w.s[w.idx[i]] = w.rhs[i]
    return 0


cdef void _residual(const double* S, const double* y, int m, Work* w) noexcept nogil:
    cdef int i, j
    cdef double acc
    for i in range(m):
        acc = y[i]
        for j in range(m):
            acc -= S[i * m + j] * w.lam[j]
        w.u[i] = acc


cdef int _orthant(const double* S, const double* y, int m, int forced,
                  double tol, Work* w) noexcept nogil:
    cdef int i, k, outer, inner, any_bad
    cdef double best, alpha, ratio
    for i in range(m):
        w.passive[i] = 0
        w.lam[i] = 0.0
    if forced >= 0:
        w.passive[forced] = 1
        if _solve_sub(S, y, m, w) != 0:
            return -1
        for i in range(m):
            w.lam[i] = w.s[i]
    for outer in range(3 * m + 10):
        _residual(S, y, m, w)
        k = -1
        best = -INFINITY
        for i in range(m):
            if not w.passive[i] and w.u[i] > tol and w.u[i] > best:
                best = w.u[i]
                k = i
        if k < 0:
            break
        w.passive[k] = 1
        for inner in range(3 * m + 10):
            if _solve_sub(S, y, m, w) != 0:
                return -1
            any_bad = 0
            alpha = INFINITY
            for i in range(m):
                if w.passive[i] and i != forced and w.s[i] <= 0.0:
                    any_bad = 1
                    ratio = w.lam[i] / (w.lam[i] - w.s[i])
                    if ratio < alpha:
                        alpha = ratio
            if not any_bad:
                for i in range(m):
                    w.lam[i] = w.s[i]
                break
            for i in range(m):
                w.lam[i] += alpha * (w.s[i] - w.lam[i])
                if w.passive[i] and i != forced and w.lam[i] <= tol * 1e-3:
                    w.passive[i] = 0
                    w.lam[i] = 0.0
    return 0


cdef double _quad(const double* S, const double* lam, int m) noexcept nogil:
    cdef int i, j
    cdef double acc = 0.0, row
    for i in range(m):
        row = 0.0
        for j in range(m):
            row += S[i * m + j] * lam[j]
        acc += lam[i] * row
    return acc if acc > 0.0 else 0.0


cdef int _face(const double* lam, int m, int forced, int* face) noexcept nogil:
    cdef int i, p = 0
    for i in range(m):
        if lam[i] > 0.0 or i == forced:
            face[p] = i
            p += 1
    return p


cdef bint _better(double val, int card, const int* face,
                  double rval, int rcard, const int* rface) noexcept nogil:
    cdef double scale = fabs(rval) if fabs(rval) > 1.0 else 1.0
    cdef int i
    if val < rval - TIE_TOL * scale:
        return True
    if val > rval + TIE_TOL * scale:
        return False
    if card != rcard:
        return card < rcard
    for i in range(card):
        if face[i] != rface[i]:
            return face[i] < rface[i]
    return False


cdef int _levelset(const double* S, const double* y, int m, Work* w,
                   double* lam_out, int* face_out, int* face_tmp,
                   double* val_out, int* card_out) noexcept nogil:
    cdef int i, j, card, arg = 0
    cdef double ymax = y[0], amax = fabs(y[0]), tol, val
    for i in range(1, m):
        if y[i] > ymax:
            ymax = y[i]
            arg = i
        if fabs(y[i]) > amax:
            amax = fabs(y[i])
    tol = REL_TOL * (1.0 + amax)
    if ymax == 0.0:
        for i in range(m):
            lam_out[i] = 0.0
        face_out[0] = arg
        card_out[0] = 1
        val_out[0] = 0.0
        return 0
    if ymax > 0.0:
        if _orthant(S, y, m, -1, tol, w) != 0:
            return -1
        for i in range(m):
            lam_out[i] = w.lam[i]
        card = _face(w.lam, m, -1, face_out)
        if card == 0:
            face_out[0] = arg
            card = 1
        card_out[0] = card
        val_out[0] = _quad(S, w.lam, m)
        return 0
    card_out[0] = 0
    for j in range(m):
        if _orthant(S, y, m, j, tol, w) != 0:
            return -1
        val = _quad(S, w.lam, m)
        card = _face(w.lam, m, j, face_tmp)
        if card_out[0] == 0 or _better(val, card, face_tmp, val_out[0], card_out[0], face_out):
            val_out[0] = val
            card_out[0] = card
            for i in range(card):
                face_out[i] = face_tmp[i]
            for i in range(m):
                lam_out[i] = w.lam[i]
    return 0


def levelset_projection(y, S):
    """Squared distance, dual multipliers and face of the projection of y."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] yy = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] SS = np.ascontiguousarray(S, dtype=np.float64)
    cdef int m = yy.shape[0]
    if SS.shape[0] != m or SS.shape[1] != m:
        raise ValueError("dimension mismatch")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lam = np.zeros(m)
    cdef int[::1] face = np.zeros(m, dtype=np.intc)
    cdef int[::1] tmp = np.zeros(m, dtype=np.intc)
    cdef double val = 0.0
    cdef int card = 0, rc
    cdef Work w
    _alloc(&w, m)
    try:
        rc = _levelset(&SS[0, 0], &yy[0], m, &w, &lam[0], &face[0], &tmp[0], &val, &card)
    finally:
        _release(&w)
    if rc != 0:
        raise np.linalg.LinAlgError("covariance block is not positive definite")
    return val, lam, tuple(int(face[i]) for i in range(card))


def levelset_distances(Y, S):
    """Row-wise squared distances for a batch of vectors ``Y`` (B x m)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] YY = np.ascontiguousarray(Y, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] SS = np.ascontiguousarray(S, dtype=np.float64)
    cdef Py_ssize_t B = YY.shape[0], b
    cdef int m = YY.shape[1]
    if SS.shape[0] != m or SS.shape[1] != m:
        raise ValueError("dimension mismatch")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(B)
    if B == 0:
        return out
    if m == 1:
        for b in range(B):
            out[b] = YY[b, 0] * YY[b, 0] / SS[0, 0]
        return out
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lam = np.zeros(m)
    cdef int[::1] face = np.zeros(m, dtype=np.intc)
    cdef int[::1] tmp = np.zeros(m, dtype=np.intc)
    cdef double val = 0.0
    cdef int card = 0, rc = 0
    cdef Work w
    _alloc(&w, m)
    try:
        with nogil:
            for b in range(B):
                rc = _levelset(&SS[0, 0], &YY[b, 0], m, &w, &lam[0], &face[0],
                               &tmp[0], &val, &card)
                if rc != 0:
                    break
                out[b] = val
    finally:
        _release(&w)
    if rc != 0:
        raise np.linalg.LinAlgError("covariance block is not positive definite")
    return out
