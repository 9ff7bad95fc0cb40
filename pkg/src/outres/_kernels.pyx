# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
# distutils: language = c++
"""Compiled kernels; see ``_kernels_py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY
from libcpp.vector cimport vector
from libcpp.algorithm cimport nth_element

cnp.import_array()


cdef inline double _dist(const double[:, ::1] X, Py_ssize_t i, const double[:, ::1] Y,
                         Py_ssize_t j) noexcept nogil:
    cdef double s = 0.0, t
    cdef Py_ssize_t v
    for v in range(X.shape[1]):
        t = X[i, v] - Y[j, v]
        s += t * t
    return s


def knn_with_ties(X, Py_ssize_t k):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    if not (1 <= k < n):
        raise ValueError(f"k={k} must lie in [1, {n - 1}]")
    kdist_a = np.empty(n)
    indptr_a = np.zeros(n + 1, dtype=np.int64)
    cdef double[::1] kdist = kdist_a
    cdef cnp.int64_t[::1] indptr = indptr_a
    cdef vector[double] row = vector[double](n)
    cdef vector[double] tmp
    cdef vector[cnp.int64_t] out_idx
    cdef vector[double] out_dist
    cdef Py_ssize_t i, j
    cdef double kd
    with nogil:
        for i in range(n):
            tmp.clear()
            for j in range(n):
                if j == i:
                    row[j] = INFINITY
                else:
                    row[j] = sqrt(_dist(x, i, x, j))
                    tmp.push_back(row[j])
            nth_element(tmp.begin(), tmp.begin() + (k - 1), tmp.end())
            kd = tmp[k - 1]
            kdist[i] = kd
            for j in range(n):
                if row[j] <= kd:
                    out_idx.push_back(j)
                    out_dist.push_back(row[j])
            indptr[i + 1] = out_idx.size()
    cdef Py_ssize_t m = out_idx.size()
    indices = np.empty(m, dtype=np.int64)
    dists = np.empty(m)
    cdef cnp.int64_t[::1] iv = indices
    cdef double[::1] dv = dists
    for j in range(m):
        iv[j] = out_idx[j]
        dv[j] = out_dist[j]
    return kdist_a, indptr_a, indices, dists


def lof_scores(X, Py_ssize_t k):
    kdist_a, indptr_a, indices_a, dists_a = knn_with_ties(X, k)
    cdef double[::1] kdist = kdist_a
    cdef cnp.int64_t[::1] indptr = indptr_a
    cdef cnp.int64_t[::1] indices = indices_a
    cdef double[::1] dists = dists_a
    cdef Py_ssize_t n = kdist.shape[0], i, t
    lrd_a = np.empty(n)
    lof_a = np.empty(n)
    cdef double[::1] lrd = lrd_a
    cdef double[::1] lof = lof_a
    cdef double s, r
    with nogil:
        for i in range(n):
            s = 0.0
            for t in range(indptr[i], indptr[i + 1]):
                r = dists[t]
                if kdist[indices[t]] > r:
                    r = kdist[indices[t]]
                s += r
            lrd[i] = (indptr[i + 1] - indptr[i]) / s if s > 0 else INFINITY
        for i in range(n):
            if lrd[i] == INFINITY:
                lof[i] = 1.0
                continue
            s = 0.0
            for t in range(indptr[i], indptr[i + 1]):
                s += lrd[indices[t]]
            lof[i] = (s / (indptr[i + 1] - indptr[i])) / lrd[i]
    return lof_a, lrd_a


def nearest_centroid(X, C):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(C, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], kc = c.shape[0], i, j
    labels_a = np.empty(n, dtype=np.int64)
    best_a = np.empty(n)
    cdef cnp.int64_t[::1] labels = labels_a
    cdef double[::1] best = best_a
    cdef double d, b
    cdef cnp.int64_t lab
    with nogil:
        for i in range(n):
            b = INFINITY
            lab = 0
            for j in range(kc):
                d = _dist(x, i, c, j)
                if d < b:
                    b = d
                    lab = j
            labels[i] = lab
            best[i] = b
    return labels_a, best_a
