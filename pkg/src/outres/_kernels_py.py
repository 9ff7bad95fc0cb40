"""Pure NumPy implementations of the hot kernels.

The compiled module ``_kernels`` mirrors these functions exactly, including
the order of floating-point operations in the distance computation, so both
backends produce bitwise-identical distances and therefore identical
k-nearest-neighbor tie sets.
"""

import numpy as np

_CHUNK_CELLS = 1 << 22


def _sq_dist_rows(X, lo, hi, Y):
    # accumulate column by column so the summation order matches the C loop
    d2 = np.zeros((hi - lo, Y.shape[0]))
    for v in range(X.shape[1]):
        diff = X[lo:hi, v][:, None] - Y[:, v][None, :]
        d2 += diff * diff
    return d2


def knn_with_ties(X, k):
    """k-distance and tie-inclusive k-nearest-neighbor sets of every row.

    Returns ``(kdist, indptr, indices, dists)`` in CSR layout: the
    neighbors of row ``i`` are ``indices[indptr[i]:indptr[i+1]]`` with
    distances ``dists[...]``, all rows ``j != i`` with ``d(i, j) <= kdist[i]``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k={k} must lie in [1, {n - 1}]")
    kdist = np.empty(n)
    nbr_idx, nbr_dist = [], []
    counts = np.empty(n, dtype=np.int64)
    step = max(1, _CHUNK_CELLS // n)
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        d = np.sqrt(_sq_dist_rows(X, lo, hi, X))
        rows = np.arange(hi - lo)
        d[rows, lo + rows] = np.inf
        kd = np.partition(d, k - 1, axis=1)[:, k - 1]
        kdist[lo:hi] = kd
        for r in range(hi - lo):
            j = np.flatnonzero(d[r] <= kd[r])
            nbr_idx.append(j)
            nbr_dist.append(d[r, j])
            counts[lo + r] = j.size
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return kdist, indptr, np.concatenate(nbr_idx).astype(np.int64), np.concatenate(nbr_dist)


def lof_scores(X, k):
    """Local outlier factor of every row with ``MinPts = k``.

    Returns ``(lof, lrd)``. A row whose reachability distances are all zero
    has infinite local reachability density and, by convention, LOF 1.
    """
    kdist, indptr, indices, dists = knn_with_ties(X, k)
    reach = np.maximum(kdist[indices], dists)
    counts = np.diff(indptr)
    # every row has >= k >= 1 neighbors, so no reduceat segment is empty
    reach_sum = np.add.reduceat(reach, indptr[:-1])
    with np.errstate(divide="ignore", invalid="ignore"):
        lrd = np.where(reach_sum > 0, counts / reach_sum, np.inf)
        mean_nb = np.add.reduceat(lrd[indices], indptr[:-1]) / counts
        lof = np.where(np.isinf(lrd), 1.0, mean_nb / lrd)
    return lof, lrd


def nearest_centroid(X, C):
    """Index of, and squared Euclidean distance to, each row's nearest centroid.

    Ties go to the lowest centroid index.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    n = X.shape[0]
    labels = np.empty(n, dtype=np.int64)
    best = np.empty(n)
    step = max(1, _CHUNK_CELLS // max(1, C.shape[0]))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        d2 = _sq_dist_rows(X, lo, hi, C)
        lab = np.argmin(d2, axis=1)
        labels[lo:hi] = lab
        best[lo:hi] = d2[np.arange(hi - lo), lab]
    return labels, best
