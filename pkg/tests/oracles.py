"""Independent reference implementations used as test oracles.

Everything here is written directly from definitions (dense matrices,
brute-force enumeration, central finite differences) and never calls into
the library's own computation paths for the quantity it checks.
"""

from __future__ import annotations

import math

import numpy as np


def finite_difference_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar-valued f() w.r.t. x.

    f must read x by reference; x is perturbed in place and restored.
    """
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def dense_softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def dense_attention_matrix(xq: np.ndarray, xkv: np.ndarray,
                           wq: np.ndarray, wk: np.ndarray) -> np.ndarray:
    """softmax(Q K^T / sqrt(d)) computed with plain dense algebra."""
    q = xq @ wq
    k = xkv @ wk
    return dense_softmax_rows(q @ k.T / math.sqrt(xq.shape[1]))


def dense_layer_norm_rows(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                          eps: float) -> np.ndarray:
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)  # population variance
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def dense_gcn_layer(adj_hat: np.ndarray, h: np.ndarray, w: np.ndarray) -> np.ndarray:
    return adj_hat @ h @ w


def dense_normalized_adjacency(adj: np.ndarray) -> np.ndarray:
    a_tilde = adj + np.eye(adj.shape[0])
    d = a_tilde.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return a_tilde * inv_sqrt[:, None] * inv_sqrt[None, :]


def dense_modularity(adj: np.ndarray, assignment: np.ndarray) -> float:
    """Q = sum_c (e_c / m - (d_c / 2m)^2) from the dense adjacency."""
    m = adj.sum() / 2.0
    degrees = adj.sum(axis=1)
    q = 0.0
    for c in np.unique(assignment):
        mask = assignment == c
        e_c = adj[np.ix_(mask, mask)].sum() / 2.0
        d_c = degrees[mask].sum()
        q += e_c / m - (d_c / (2.0 * m)) ** 2
    return float(q)


def iter_set_partitions(n: int):
    """All partitions of range(n) as restricted-growth label arrays."""
    labels = np.zeros(n, dtype=np.int64)
    maxes = np.zeros(n, dtype=np.int64)  # max label among first i+1 entries

    def rec(i):
        if i == n:
            yield labels.copy()
            return
        top = maxes[i - 1] if i else -1
        for v in range(top + 2):
            labels[i] = v
            maxes[i] = max(top, v)
            yield from rec(i + 1)

    yield from rec(0)


def best_partition_bruteforce(adj: np.ndarray) -> tuple[float, np.ndarray]:
    """Exhaustive maximum-modularity partition (feasible for n <= 10)."""
    best_q = -np.inf
    best = None
    for labels in iter_set_partitions(adj.shape[0]):
        q = dense_modularity(adj, labels)
        if q > best_q:
            best_q, best = q, labels
    return best_q, best


def graph_to_dense(g) -> np.ndarray:
    adj = np.zeros((g.num_nodes, g.num_nodes))
    for i in range(g.num_nodes):
        adj[i, g.neighbors(i)] = 1.0
    return adj
