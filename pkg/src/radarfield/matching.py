"""Optimal assignment between predictions and ground truth, and set metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["Assignment", "GospaResult", "R_EPS", "build_cost_matrix",
           "linear_assignment", "solve_assignment", "chamfer", "emd", "gospa",
           "pairwise_distances"]

R_EPS = 1e-7


def _points(X):
    pts = getattr(X, "points", X)
    return np.asarray(pts, dtype=float).reshape(-1, 3)


def pairwise_distances(X, Y):
    X, Y = _points(X), _points(Y)
    diff = X[:, None, :] - Y[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


@dataclass(frozen=True)
class Assignment:
    """Matched (prediction, truth) index pairs plus unmatched predictions."""

    pred_index: np.ndarray
    truth_index: np.ndarray
    unmatched: np.ndarray

    @property
    def pairs(self):
        return set(zip(self.pred_index.tolist(), self.truth_index.tolist()))

    def cost(self, C):
        return float(np.asarray(C)[self.pred_index, self.truth_index].sum())


def build_cost_matrix(pred_positions, r, truth):
    """C_ij = ||y_hat_i - y_j|| - log(clip(r_i)); rows are predictions.

    Requires strictly more predictions than truth points.
    """
    P = _points(pred_positions)
    T = _points(truth)
    if len(P) <= len(T):
        raise ValueError(f"need more predictions ({len(P)}) than truth points ({len(T)})")
    r = np.clip(np.asarray(r, dtype=float).reshape(-1), R_EPS, 1.0 - R_EPS)
    return pairwise_distances(P, T) - np.log(r)[:, None]


def linear_assignment(cost):
    """Minimum-cost assignment of every row of ``cost`` to a distinct column.

    Shortest augmenting path (Jonker-Volgenant style) with dual potentials;
    requires ``rows <= cols``. Among equal-cost candidates the lowest column
    index is taken. Returns the column chosen for each row.
    """
    cost = np.asarray(cost, dtype=float)
    nr, nc = cost.shape
    if nr > nc:
        raise ValueError("linear_assignment needs rows <= cols")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    u = np.zeros(nr)
    v = np.zeros(nc)
    col4row = np.full(nr, -1)
    row4col = np.full(nc, -1)
    for cur in range(nr):
        shortest = np.full(nc, np.inf)
        path = np.full(nc, -1)
        seen_col = np.zeros(nc, dtype=bool)
        seen_rows = [cur]
        i, min_val, sink = cur, 0.0, -1
        while sink < 0:
            red = min_val + cost[i] - u[i] - v
            better = (~seen_col) & (red < shortest)
            shortest[better] = red[better]
            path[better] = i
            masked = np.where(seen_col, np.inf, shortest)
            j = int(np.argmin(masked))
            min_val = masked[j]
            if not np.isfinite(min_val):
                raise ValueError("infeasible assignment problem")
            seen_col[j] = True
            if row4col[j] < 0:
                sink = j
            else:
                i = int(row4col[j])
                seen_rows.append(i)
        u[cur] += min_val
        for r in seen_rows[1:]:
            u[r] += min_val - shortest[col4row[r]]
        v[seen_col] -= min_val - shortest[seen_col]
        j = sink
        while True:
            i = int(path[j])
            row4col[j] = i
            col4row[i], j = j, col4row[i]
            if i == cur:
                break
    return col4row


def solve_assignment(C):
    """Optimal injective matching of truth columns to prediction rows."""
    C = np.asarray(C, dtype=float)
    n_pred, n_truth = C.shape
    if n_truth == 0:
        return Assignment(np.zeros(0, int), np.zeros(0, int), np.arange(n_pred))
    pred_for_truth = linear_assignment(C.T)
    order = np.argsort(pred_for_truth, kind="stable")
    pred_idx = pred_for_truth[order]
    truth_idx = np.arange(n_truth)[order]
    unmatched = np.setdiff1d(np.arange(n_pred), pred_idx)
    return Assignment(pred_idx, truth_idx, unmatched)


def chamfer(X, Y):
    """Symmetric mean nearest-neighbour distance (non-squared)."""
    X, Y = _points(X), _points(Y)
    if len(X) == 0 or len(Y) == 0:
        raise ValueError("chamfer distance needs two non-empty sets")
    D = pairwise_distances(X, Y)
    return float(0.5 * D.min(axis=1).mean() + 0.5 * D.min(axis=0).mean())


def _transport(cost, supply, demand):
    """Exact balanced transportation problem by successive shortest paths.

    ``supply`` and ``demand`` are integer arrays with equal sums. Returns
    the flow matrix.
    """
    n, m = cost.shape
    a = np.array(supply, dtype=np.int64)
    b = np.array(demand, dtype=np.int64)
    flow = np.zeros((n, m), dtype=np.int64)
    px = np.zeros(n)
    py = np.zeros(m)
    while a.sum() > 0:
        dx = np.where(a > 0, 0.0, np.inf)
        dy = np.full(m, np.inf)
        done_x = np.zeros(n, dtype=bool)
        done_y = np.zeros(m, dtype=bool)
        prev_y = np.full(m, -1)  # x feeding y via a forward arc
        prev_x = np.full(n, -1)  # y feeding x via a backward arc
        sink = -1
        while True:
            cand_x = np.where(done_x, np.inf, dx)
            cand_y = np.where(done_y, np.inf, dy)
            ix, iy = int(np.argmin(cand_x)), int(np.argmin(cand_y))
            if cand_x[ix] <= cand_y[iy]:
                if not np.isfinite(cand_x[ix]):
                    raise RuntimeError("transport problem disconnected")
                done_x[ix] = True
                red = dx[ix] + cost[ix] + px[ix] - py
                upd = (~done_y) & (red < dy)
                dy[upd] = red[upd]
                prev_y[upd] = ix
            else:
                done_y[iy] = True
                if b[iy] > 0:
                    sink = iy
                    break
                back = flow[:, iy] > 0
                red = dy[iy] - cost[:, iy] + py[iy] - px
                upd = (~done_x) & back & (a == 0) & (red < dx)
                dx[upd] = red[upd]
                prev_x[upd] = iy
        dist = dy[sink]
        px += np.minimum(dx, dist)
        py += np.minimum(dy, dist)
        # walk back from the sink: forward arcs x->y alternate with backward y->x
        forward, backward = [], []
        j = sink
        while True:
            i = int(prev_y[j])
            forward.append((i, j))
            if prev_x[i] < 0:
                break
            j = int(prev_x[i])
            backward.append((i, j))
        src = forward[-1][0]
        delta = min(a[src], b[sink])
        for i, j in backward:
            delta = min(delta, flow[i, j])
        for i, j in forward:
            flow[i, j] += delta
        for i, j in backward:
            flow[i, j] -= delta
        a[src] -= delta
        b[sink] -= delta
    return flow


def emd(X, Y):
    """Exact earth mover's distance between uniform masses on two point sets."""
    X, Y = _points(X), _points(Y)
    n, m = len(X), len(Y)
    if n == 0 or m == 0:
        raise ValueError("EMD needs two non-empty sets")
    D = pairwise_distances(X, Y)
    if n == m:
        rows = linear_assignment(D)
        return float(D[np.arange(n), rows].sum() / n)
    flow = _transport(D, np.full(n, m), np.full(m, n))
    return float((flow * D).sum() / (n * m))


@dataclass(frozen=True)
class GospaResult:
    total: float
    localization: float
    missed: float
    false: float
    num_assigned: int
    num_missed: int
    num_false: int

    def as_dict(self):
        return {"gospa": self.total, "localization": self.localization,
                "missed": self.missed, "false": self.false,
                "num_assigned": self.num_assigned, "num_missed": self.num_missed,
                "num_false": self.num_false}


def gospa(X, Y, c=1.0, alpha=2.0, p=1.0):
    """GOSPA between predictions X and truth Y with its decomposition.

    Pairs whose distance reaches the cut-off ``c`` are reported as one miss
    plus one false detection; with ``alpha = 2`` this costs the same.
    """
    if not c > 0:
        raise ValueError("cut-off c must be positive")
    if not 0 < alpha <= 2:
        raise ValueError("alpha must lie in (0, 2]")
    if not p >= 1:
        raise ValueError("order p must be >= 1")
    X, Y = _points(X), _points(Y)
    n, m = len(X), len(Y)
    card = c ** p / alpha
    loc = 0.0
    assigned = 0
    if n and m:
        D = np.minimum(pairwise_distances(X, Y), c) ** p
        if n <= m:
            cols = linear_assignment(D)
            pair_cost = D[np.arange(n), cols]
        else:
            rows = linear_assignment(D.T)
            pair_cost = D[rows, np.arange(m)]
        hit = pair_cost < c ** p
        loc = float(pair_cost[hit].sum())
        assigned = int(hit.sum())
        # pairs sitting at the cut-off cost c^p = 2 * card only when alpha == 2
        capped = float(pair_cost[~hit].sum()) - 2 * card * int((~hit).sum())
    else:
        capped = 0.0
    missed, false = m - assigned, n - assigned
    total = loc + card * (missed + false) + capped
    return GospaResult(float(total ** (1.0 / p)), loc, card * missed, card * false,
                       assigned, missed, false)
