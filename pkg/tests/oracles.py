"""Independent brute-force oracles used by unit and acceptance tests.

These intentionally avoid the package's internal code paths: dense numpy
matrices, explicit loops, full sorts.
"""

import numpy as np


def dense_transition(item_lists, node_count):
    adj = np.zeros((node_count, node_count))
    for items in item_lists:
        for a, b in zip(items, items[1:]):
            if a != b:
                adj[a, b] += 1
                adj[b, a] += 1
    return adj


def dense_cointeraction(item_lists, node_count, k):
    rows = np.zeros((len(item_lists), node_count))
    for u, items in enumerate(item_lists):
        for item in items:
            rows[u, item] = 1.0
    raw = rows.T @ rows
    np.fill_diagonal(raw, 0.0)
    keep = np.zeros_like(raw, dtype=bool)
    for node in range(node_count):
        neighbors = [(j, raw[node, j]) for j in range(node_count) if raw[node, j] > 0]
        neighbors.sort(key=lambda t: (-t[1], t[0]))
        for j, _ in neighbors[:k]:
            keep[node, j] = True
    keep = keep | keep.T  # union re-symmetrization
    return np.where(keep, raw, 0.0)


def dense_normalize(adj):
    deg = adj.sum(axis=1)
    inv = np.zeros_like(deg)
    inv[deg > 0] = deg[deg > 0] ** -0.5
    return adj * inv[:, None] * inv[None, :]


def dense_perturb(adj, items):
    out = adj.copy()
    for a, b in zip(items, items[1:]):
        if a != b:
            out[a, b] = max(0.0, out[a, b] - 1)
            out[b, a] = max(0.0, out[b, a] - 1)
    return out


def dense_propagate_mean(norm_adj, base, layers):
    outputs = [base]
    current = base
    for _ in range(layers):
        current = norm_adj @ current
        outputs.append(current)
    return sum(outputs) / len(outputs)


def graph_to_dense(graph):
    adj = np.zeros((graph.node_count, graph.node_count))
    for i, j, w in zip(graph.src, graph.dst, graph.weight):
        adj[i, j] = w
    return adj


def rank_by_full_sort(scores_row, target_col, excluded=()):
    """1-based rank of the target under (descending score, ascending id)."""
    order = sorted(
        (j for j in range(len(scores_row)) if j not in excluded),
        key=lambda j: (-scores_row[j], j),
    )
    return order.index(target_col) + 1


def random_item_lists(rng, node_count, users, max_len):
    """Random sequences over internal ids 1..node_count-1."""
    lists = []
    for _ in range(users):
        length = int(rng.integers(1, max_len + 1))
        lists.append([int(rng.integers(1, node_count)) for _ in range(length)])
    return lists
