"""Pure-Python implementations of the hot kernels.

These are the reference semantics; the compiled module ``_ckernels`` must
return identical results.
"""
import math

import numpy as np

BACKEND = "python"

_INF = float("inf")


def _check_matrix(cost):
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    return cost


def _solve_rows_le_cols(c, n, m):
    """Shortest augmenting path assignment for an n x m list-of-lists, n <= m.

    Returns (row_to_col, total, u, v) with dual potentials u (rows), v (cols)
    satisfying u[i] + v[j] <= c[i][j] and v[j] <= 0.
    """
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [_INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = c[i0 - 1]
            ui0 = u[i0]
            delta = _INF
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
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
    row_to_col = [-1] * n
    for j in range(1, m + 1):
        if p[j]:
            row_to_col[p[j] - 1] = j - 1
    total = 0.0
    for i in range(n):
        total += c[i][row_to_col[i]]
    return row_to_col, total, u[1:], v[1:]


def _solve(c, rows, cols):
    """Optimal assignment restricted to ``rows`` x ``cols`` of matrix ``c``.

    Returns (pairs, total, row_dual, col_dual) where the duals are dicts keyed
    by original row / column index.
    """
    n, m = len(rows), len(cols)
    if n == 0 or m == 0:
        return [], 0.0, {r: 0.0 for r in rows}, {k: 0.0 for k in cols}
    if n <= m:
        sub = [[c[r][k] for k in cols] for r in rows]
        r2c, total, u, v = _solve_rows_le_cols(sub, n, m)
        pairs = [(rows[a], cols[b]) for a, b in enumerate(r2c)]
        return pairs, total, dict(zip(rows, u)), dict(zip(cols, v))
    sub = [[c[r][k] for r in rows] for k in cols]
    c2r, total, u, v = _solve_rows_le_cols(sub, m, n)
    pairs = sorted((rows[b], cols[a]) for a, b in enumerate(c2r))
    return pairs, total, dict(zip(rows, v)), dict(zip(cols, u))


def linear_assignment(cost):
    """Minimum-cost assignment of min(n, m) pairs.

    Among all optimal assignments the lexicographically smallest list of
    (row, col) pairs is returned.
    """
    cost = _check_matrix(cost)
    n, m = cost.shape
    if n == 0 or m == 0:
        return []
    c = cost.tolist()
    k_total = min(n, m)
    all_rows = list(range(n))
    all_cols = list(range(m))
    _, opt, u, v = _solve(c, all_rows, all_cols)
    scale = max(1.0, float(np.max(np.abs(cost))))
    tol = 1e-9 * scale * (k_total + 1)

    fixed = []
    fixed_cost = 0.0
    free_cols = list(all_cols)
    for i in range(n):
        if len(fixed) == k_total:
            break
        rest_rows = list(range(i + 1, n))
        need = k_total - len(fixed) - 1
        chosen = None
        for j in free_cols:
            if c[i][j] - u[i] - v[j] > tol:
                continue
            rest_cols = [k for k in free_cols if k != j]
            if need > min(len(rest_rows), len(rest_cols)):
                continue
            _, sub_opt, _, _ = _solve(c, rest_rows, rest_cols)
            if fixed_cost + c[i][j] + sub_opt <= opt + tol:
                chosen = j
                break
        if chosen is None:
            continue
        fixed.append((i, chosen))
        fixed_cost += c[i][chosen]
        free_cols.remove(chosen)
    if len(fixed) != k_total:
        # tolerance corner case: fall back to the plain optimum
        pairs, _, _, _ = _solve(c, all_rows, all_cols)
        return pairs
    return fixed


def soda_dp(scores):
    """Best total score over order-preserving one-to-one matchings."""
    s = np.asarray(scores, dtype=np.float64)
    n, m = s.shape
    if n == 0 or m == 0:
        return 0.0
    rows = s.tolist()
    prev = [0.0] * (m + 1)
    for i in range(1, n + 1):
        cur = [0.0] * (m + 1)
        r = rows[i - 1]
        for j in range(1, m + 1):
            best = prev[j]
            if cur[j - 1] > best:
                best = cur[j - 1]
            diag = prev[j - 1] + r[j - 1]
            if diag > best:
                best = diag
            cur[j] = best
        prev = cur
    return prev[m]


def pairwise_tiou(a, b):
    """tIoU between every segment of ``a`` (n x 2) and ``b`` (m x 2)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    out = np.zeros((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        s0, e0 = a[i]
        for j in range(b.shape[0]):
            s1, e1 = b[j]
            inter = min(e0, e1) - max(s0, s1)
            if inter <= 0.0:
                continue
            union = max(e0, e1) - min(s0, s1)
            out[i, j] = inter / union if union > 0.0 else 0.0
    return out


def pairwise_box_iou(a, b):
    """IoU between every box of ``a`` (n x 4) and ``b`` (m x 4), xyxy."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    out = np.zeros((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        ax1, ay1, ax2, ay2 = a[i]
        area_a = max(0.0, ax2 - ax1) * max(0.0, ay2 - ay1)
        for j in range(b.shape[0]):
            bx1, by1, bx2, by2 = b[j]
            w = min(ax2, bx2) - max(ax1, bx1)
            h = min(ay2, by2) - max(ay1, by1)
            if w <= 0.0 or h <= 0.0:
                continue
            inter = w * h
            area_b = max(0.0, bx2 - bx1) * max(0.0, by2 - by1)
            union = area_a + area_b - inter
            out[i, j] = inter / union if union > 0.0 else 0.0
    return out


def majority_filter(flags, window):
    """Centered majority vote over a boolean sequence.

    The window is truncated at the sequence ends; an exact tie keeps the
    frame's own value.
    """
    x = [bool(f) for f in flags]
    n = len(x)
    half = window // 2
    out = np.zeros(n, dtype=bool)
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n, i + (window - half))
        ones = sum(x[lo:hi])
        zeros = (hi - lo) - ones
        if ones > zeros:
            out[i] = True
        elif ones == zeros:
            out[i] = x[i]
    return out


def assignment_cost(cost, pairs):
    cost = np.asarray(cost, dtype=np.float64)
    return math.fsum(cost[i, j] for i, j in pairs)
