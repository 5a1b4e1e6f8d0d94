# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def sq_dists(A, B):
    cdef const double[:, ::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, ::1] b = np.ascontiguousarray(B, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], k = b.shape[0], d = a.shape[1]
    if b.shape[1] != d:
        raise ValueError("dimension mismatch")
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, t
    cdef double acc, diff
    for i in range(n):
        for j in range(k):
            acc = 0.0
            for t in range(d):
                diff = a[i, t] - b[j, t]
                acc += diff * diff
            o[i, j] = acc
    return out


def neg_sq_softmax(V, C):
    out = sq_dists(V, C)
    cdef double[:, ::1] p = out
    cdef Py_ssize_t n = p.shape[0], k = p.shape[1], i, j
    cdef double m, z
    for i in range(n):
        m = p[i, 0]
        for j in range(1, k):
            if p[i, j] < m:
                m = p[i, j]
        z = 0.0
        for j in range(k):
            p[i, j] = exp(m - p[i, j])
            z += p[i, j]
        for j in range(k):
            p[i, j] /= z
    return out


def proto_xent(V, C, y):
    cdef const double[:, ::1] v = np.ascontiguousarray(V, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(C, dtype=np.float64)
    cdef const cnp.int64_t[::1] lab = np.ascontiguousarray(y, dtype=np.int64)
    cdef Py_ssize_t T = v.shape[0], K = c.shape[0], d = v.shape[1]
    gV_arr = np.zeros((T, d), dtype=np.float64)
    gC_arr = np.zeros((K, d), dtype=np.float64)
    if T == 0:
        return 0.0, gV_arr, gC_arr
    cdef double[:, ::1] gV = gV_arr
    cdef double[:, ::1] gC = gC_arr
    s_arr = np.empty(K, dtype=np.float64)
    cdef double[::1] s = s_arr
    cdef Py_ssize_t i, j, t, yi
    cdef double acc, diff, smax, z, loss = 0.0, g, invT = 1.0 / T
    for i in range(T):
        yi = lab[i]
        if yi < 0 or yi >= K:
            raise IndexError("label index out of range")
        for j in range(K):
            acc = 0.0
            for t in range(d):
                diff = v[i, t] - c[j, t]
                acc += diff * diff
            s[j] = -acc
        smax = s[0]
        for j in range(1, K):
            if s[j] > smax:
                smax = s[j]
        z = 0.0
        for j in range(K):
            z += exp(s[j] - smax)
        loss -= s[yi] - smax - log(z)
        for j in range(K):
            g = exp(s[j] - smax) / z
            if j == yi:
                g -= 1.0
            g *= invT
            for t in range(d):
                diff = v[i, t] - c[j, t]
                gV[i, t] -= 2.0 * g * diff
                gC[j, t] += 2.0 * g * diff
    return loss * invT, gV_arr, gC_arr


def knn_vote(train, train_y, queries, Py_ssize_t k, Py_ssize_t n_classes):
    cdef double[:, ::1] D = sq_dists(queries, train)
    cdef const cnp.int64_t[::1] ty = np.ascontiguousarray(train_y, dtype=np.int64)
    cdef Py_ssize_t nq = D.shape[0], nt = D.shape[1], i, j, r, best_j, best_c
    pred_arr = np.empty(nq, dtype=np.int64)
    cdef cnp.int64_t[::1] pred = pred_arr
    taken_arr = np.empty(nt, dtype=np.uint8)
    cdef unsigned char[::1] taken = taken_arr
    votes_arr = np.empty(n_classes, dtype=np.int64)
    cdef cnp.int64_t[::1] votes = votes_arr
    cdef double best = 0.0
    if k < 1 or k > nt:
        raise ValueError("k must be in [1, n_train]")
    for i in range(nq):
        taken[:] = 0
        votes[:] = 0
        # k rounds of selection: strict < keeps the lowest index among ties
        for r in range(k):
            best_j = -1
            for j in range(nt):
                if not taken[j] and (best_j < 0 or D[i, j] < best):
                    best = D[i, j]
                    best_j = j
            taken[best_j] = 1
            votes[ty[best_j]] += 1
        best_c = 0
        for j in range(1, n_classes):
            if votes[j] > votes[best_c]:
                best_c = j
        pred[i] = best_c
    return pred_arr
