"""Clustering accuracy under optimal matching, and normalized mutual information."""
from __future__ import annotations

import numpy as np

from .errors import ParameterError


def hungarian(cost) -> np.ndarray:
    """Minimum-cost perfect matching on a square matrix.

    Returns ``perm`` with row ``i`` assigned to column ``perm[i]``. Shortest
    augmenting paths with row/column potentials, O(n^3).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ParameterError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ParameterError("cost matrix must be finite")
    n = cost.shape[0]
    # 1-based bookkeeping; index 0 is the virtual root of each augmenting search
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)   # match[col] = row
    way = np.zeros(n + 1, dtype=np.int64)
    for row in range(1, n + 1):
        match[0] = row
        col0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[col0] = True
            r = match[col0]
            free = ~used[1:]
            reduced = cost[r - 1] - u[r] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = col0
            cand = np.where(free, minv[1:], np.inf)
            col1 = int(cand.argmin()) + 1
            delta = cand[col1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            col0 = col1
            if match[col0] == 0:
                break
        while col0:
            prev = way[col0]
            match[col0] = match[prev]
            col0 = prev
    perm = np.empty(n, dtype=np.int64)
    perm[match[1:] - 1] = np.arange(n)
    return perm


def _check_pair(true_labels, pred_labels):
    t = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    p = np.asarray(pred_labels, dtype=np.int64).reshape(-1)
    if t.shape != p.shape:
        raise ParameterError(f"label vectors differ in length: {t.size} vs {p.size}")
    if t.size == 0:
        raise ParameterError("label vectors are empty")
    if t.min() < 0 or p.min() < 0:
        raise ParameterError("labels must be non-negative integers")
    return t, p


def contingency(true_labels, pred_labels) -> np.ndarray:
    """Counts with rows indexed by true class and columns by predicted cluster."""
    t, p = _check_pair(true_labels, pred_labels)
    table = np.zeros((t.max() + 1, p.max() + 1), dtype=np.int64)
    np.add.at(table, (t, p), 1)
    return table


def accuracy(true_labels, pred_labels) -> float:
    table = contingency(true_labels, pred_labels)
    size = max(table.shape)
    square = np.zeros((size, size))
    square[: table.shape[0], : table.shape[1]] = table
    perm = hungarian(-square)
    return float(square[np.arange(size), perm].sum() / table.sum())


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(true_labels, pred_labels) -> float:
    """I(T;P) / sqrt(H(T) H(P)), natural logarithms.

    When an entropy is zero the score is 1 for identical partitions and 0 otherwise.
    """
    table = contingency(true_labels, pred_labels).astype(np.float64)
    n = table.sum()
    h_t = _entropy(table.sum(1))
    h_p = _entropy(table.sum(0))
    if h_t == 0 or h_p == 0:
        # both partitions are identical only if both are single blocks
        return 1.0 if h_t == 0 and h_p == 0 else 0.0
    joint = table[table > 0] / n
    outer = np.outer(table.sum(1), table.sum(0))[table > 0] / n**2
    mi = float((joint * np.log(joint / outer)).sum())
    return float(np.clip(mi / np.sqrt(h_t * h_p), 0.0, 1.0))
