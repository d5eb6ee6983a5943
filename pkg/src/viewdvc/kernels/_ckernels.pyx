# cython: language_level=3
"""Compiled twins of the kernels in ``_pykernels``."""
import numpy as np

from libc.math cimport fabs, INFINITY, isfinite
from libc.stdlib cimport malloc, free

BACKEND = "cython"


cdef double _solve_sub(const double[:, :] c, int* rows, int nr, int* cols, int nc,
                       int* out_row_of, double* row_dual, double* col_dual) except? -1.0:
    """Optimal assignment on the sub-matrix rows x cols.

    out_row_of[a] receives the column position (0..nc-1) assigned to row
    position a, or -1. Duals are written per position when the pointers are
    not NULL.
    """
    cdef bint transpose = nr > nc
    cdef int n = nc if transpose else nr
    cdef int m = nr if transpose else nc
    cdef int i, j, j0, j1, i0, a
    cdef double delta, cur, total = 0.0
    cdef double* u
    cdef double* v
    cdef double* minv
    cdef int* p
    cdef int* way
    cdef char* used
    if n == 0:
        for a in range(nr):
            out_row_of[a] = -1
        return 0.0
    u = <double*>malloc((n + 1) * sizeof(double))
    v = <double*>malloc((m + 1) * sizeof(double))
    minv = <double*>malloc((m + 1) * sizeof(double))
    p = <int*>malloc((m + 1) * sizeof(int))
    way = <int*>malloc((m + 1) * sizeof(int))
    used = <char*>malloc((m + 1) * sizeof(char))
    try:
        for i in range(n + 1):
            u[i] = 0.0
        for j in range(m + 1):
            v[j] = 0.0
            p[j] = 0
            way[j] = 0
        for i in range(1, n + 1):
            p[0] = i
            j0 = 0
            for j in range(m + 1):
                minv[j] = INFINITY
                used[j] = 0
            while True:
                used[j0] = 1
                i0 = p[j0]
                delta = INFINITY
                j1 = 0
                for j in range(1, m + 1):
                    if not used[j]:
                        if transpose:
                            cur = c[rows[j - 1], cols[i0 - 1]] - u[i0] - v[j]
                        else:
                            cur = c[rows[i0 - 1], cols[j - 1]] - u[i0] - v[j]
                        if cur < minv[j]:
                            minv[j] = cur
                            way[j] = j0
                        if minv[j] < delta:
                            delta = minv[j]
                            j1 = j
                for j in range(m + 1):
                    if used[j]:
                        u[p[j]] += delta
                        v[j] -= delta
                    else:
                        minv[j] -= delta
                j0 = j1
                if p[j0] == 0:
                    break
            while True:
                j1 = way[j0]
                p[j0] = p[j1]
                j0 = j1
                if j0 == 0:
                    break
        for a in range(nr):
            out_row_of[a] = -1
        for j in range(1, m + 1):
            if p[j]:
                if transpose:
                    out_row_of[j - 1] = p[j] - 1
                    total += c[rows[j - 1], cols[p[j] - 1]]
                else:
                    out_row_of[p[j] - 1] = j - 1
                    total += c[rows[p[j] - 1], cols[j - 1]]
        if row_dual != NULL:
            if transpose:
                for a in range(nr):
                    row_dual[a] = v[a + 1]
                for a in range(nc):
                    col_dual[a] = u[a + 1]
            else:
                for a in range(nr):
                    row_dual[a] = u[a + 1]
                for a in range(nc):
                    col_dual[a] = v[a + 1]
        return total
    finally:
        free(u)
        free(v)
        free(minv)
        free(p)
        free(way)
        free(used)


def linear_assignment(cost):
    """Minimum-cost assignment of min(n, m) pairs, lexicographically smallest
    among optima."""
    arr = np.ascontiguousarray(cost, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("cost matrix contains non-finite entries")
    cdef const double[:, :] c = arr
    cdef int n = arr.shape[0]
    cdef int m = arr.shape[1]
    if n == 0 or m == 0:
        return []
    cdef int k_total = n if n < m else m
    cdef int* rows = <int*>malloc(n * sizeof(int))
    cdef int* cols = <int*>malloc(m * sizeof(int))
    cdef int* rest_rows = <int*>malloc(n * sizeof(int))
    cdef int* rest_cols = <int*>malloc(m * sizeof(int))
    cdef int* row_of = <int*>malloc(n * sizeof(int))
    cdef int* free_cols = <int*>malloc(m * sizeof(int))
    cdef double* rdual = <double*>malloc(n * sizeof(double))
    cdef double* cdual = <double*>malloc(m * sizeof(double))
    cdef int i, j, jj, a, nfree, nrest_r, nrest_c, need, chosen, nfixed = 0
    cdef double opt, sub_opt, tol, scale, fixed_cost = 0.0
    fixed = []
    try:
        for i in range(n):
            rows[i] = i
        for j in range(m):
            cols[j] = j
            free_cols[j] = j
        nfree = m
        opt = _solve_sub(c, rows, n, cols, m, row_of, rdual, cdual)
        scale = max(1.0, float(np.max(np.abs(arr))))
        tol = 1e-9 * scale * (k_total + 1)
        for i in range(n):
            if nfixed == k_total:
                break
            nrest_r = 0
            for a in range(i + 1, n):
                rest_rows[nrest_r] = a
                nrest_r += 1
            need = k_total - nfixed - 1
            chosen = -1
            for jj in range(nfree):
                j = free_cols[jj]
                if c[i, j] - rdual[i] - cdual[j] > tol:
                    continue
                nrest_c = 0
                for a in range(nfree):
                    if free_cols[a] != j:
                        rest_cols[nrest_c] = free_cols[a]
                        nrest_c += 1
                if need > (nrest_r if nrest_r < nrest_c else nrest_c):
                    continue
                sub_opt = _solve_sub(c, rest_rows, nrest_r, rest_cols, nrest_c,
                                     row_of, NULL, NULL)
                if fixed_cost + c[i, j] + sub_opt <= opt + tol:
                    chosen = j
                    break
            if chosen < 0:
                continue
            fixed.append((i, chosen))
            nfixed += 1
            fixed_cost += c[i, chosen]
            a = 0
            for jj in range(nfree):
                if free_cols[jj] != chosen:
                    free_cols[a] = free_cols[jj]
                    a += 1
            nfree = a
        if nfixed != k_total:
            _solve_sub(c, rows, n, cols, m, row_of, NULL, NULL)
            fixed = [(a, row_of[a]) for a in range(n) if row_of[a] >= 0]
        return fixed
    finally:
        free(rows)
        free(cols)
        free(rest_rows)
        free(rest_cols)
        free(row_of)
        free(free_cols)
        free(rdual)
        free(cdual)


def soda_dp(scores):
    """Best total score over order-preserving one-to-one matchings."""
    arr = np.ascontiguousarray(scores, dtype=np.float64)
    cdef const double[:, :] s = arr
    cdef Py_ssize_t n = arr.shape[0]
    cdef Py_ssize_t m = arr.shape[1]
    cdef Py_ssize_t i, j
    cdef double best, diag
    if n == 0 or m == 0:
        return 0.0
    cdef double[:] prev = np.zeros(m + 1)
    cdef double[:] cur = np.zeros(m + 1)
    cdef double[:] tmp
    for i in range(1, n + 1):
        cur[0] = 0.0
        for j in range(1, m + 1):
            best = prev[j]
            if cur[j - 1] > best:
                best = cur[j - 1]
            diag = prev[j - 1] + s[i - 1, j - 1]
            if diag > best:
                best = diag
            cur[j] = best
        tmp = prev
        prev = cur
        cur = tmp
    return prev[m]


def pairwise_tiou(a, b):
    """tIoU between every segment of ``a`` (n x 2) and ``b`` (m x 2)."""
    aa = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 2)
    bb = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 2)
    out_arr = np.zeros((aa.shape[0], bb.shape[0]))
    cdef const double[:, :] x = aa
    cdef const double[:, :] y = bb
    cdef double[:, :] out = out_arr
    cdef Py_ssize_t i, j
    cdef double inter, union
    for i in range(x.shape[0]):
        for j in range(y.shape[0]):
            inter = min(x[i, 1], y[j, 1]) - max(x[i, 0], y[j, 0])
            if inter <= 0.0:
                continue
            union = max(x[i, 1], y[j, 1]) - min(x[i, 0], y[j, 0])
            if union > 0.0:
                out[i, j] = inter / union
    return out_arr


def pairwise_box_iou(a, b):
    """IoU between every box of ``a`` (n x 4) and ``b`` (m x 4), xyxy."""
    aa = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    bb = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    out_arr = np.zeros((aa.shape[0], bb.shape[0]))
    cdef const double[:, :] x = aa
    cdef const double[:, :] y = bb
    cdef double[:, :] out = out_arr
    cdef Py_ssize_t i, j
    cdef double w, h, inter, area_a, area_b, union
    for i in range(x.shape[0]):
        area_a = max(0.0, x[i, 2] - x[i, 0]) * max(0.0, x[i, 3] - x[i, 1])
        for j in range(y.shape[0]):
            w = min(x[i, 2], y[j, 2]) - max(x[i, 0], y[j, 0])
            h = min(x[i, 3], y[j, 3]) - max(x[i, 1], y[j, 1])
            if w <= 0.0 or h <= 0.0:
                continue
            inter = w * h
            area_b = max(0.0, y[j, 2] - y[j, 0]) * max(0.0, y[j, 3] - y[j, 1])
            union = area_a + area_b - inter
            if union > 0.0:
                out[i, j] = inter / union
    return out_arr


def majority_filter(flags, int window):
    """Centered majority vote; ties keep the frame's own value."""
    arr = np.ascontiguousarray(flags, dtype=np.uint8).reshape(-1)
    cdef const unsigned char[:] x = arr
    cdef Py_ssize_t n = arr.shape[0]
    out_arr = np.zeros(n, dtype=bool)
    cdef unsigned char[:] out = out_arr.view(np.uint8)
    cdef Py_ssize_t i, k, lo, hi
    cdef int half = window // 2
    cdef long ones, zeros
    for i in range(n):
        lo = i - half
        if lo < 0:
            lo = 0
        hi = i + (window - half)
        if hi > n:
            hi = n
        ones = 0
        for k in range(lo, hi):
            if x[k]:
                ones += 1
        zeros = (hi - lo) - ones
        if ones > zeros:
            out[i] = 1
        elif ones == zeros:
            out[i] = 1 if x[i] else 0
    return out_arr


def assignment_cost(cost, pairs):
    import math
    arr = np.asarray(cost, dtype=np.float64)
    return math.fsum(arr[i, j] for i, j in pairs)
