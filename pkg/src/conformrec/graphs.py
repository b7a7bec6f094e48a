"""Weighted symmetric item graphs: transition adjacency, co-interaction
adjacency with per-item top-k sparsification, symmetric normalization, and
per-user perturbation.

Graphs live in the internal id space: node 0 is the pad token and never
carries an edge. Edges are stored in both directions in a canonical
(src, dst) order so rebuilds are byte-stable.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import UserSequence


class GraphStateError(Exception):
    """Raised when an operation receives a graph in the wrong state."""


@dataclass
class SparseGraph:
    node_count: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    normalized: bool = False
    perturbed_for: int | None = None
    base_degree: np.ndarray | None = None

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.weight = np.asarray(self.weight, dtype=np.float64)

    @property
    def edge_count(self) -> int:
        return len(self.src)

    def degrees(self) -> np.ndarray:
        """Per-node sum of incident weights (of the stored weights)."""
        deg = np.zeros(self.node_count, dtype=np.float64)
        np.add.at(deg, self.src, self.weight)
        return deg

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {(int(i), int(j)): float(w) for i, j, w in zip(self.src, self.dst, self.weight)}

    def neighbors(self, node: int) -> list[tuple[int, float]]:
        mask = self.src == node
        return [(int(j), float(w)) for j, w in zip(self.dst[mask], self.weight[mask])]

    def to_torch(self, dtype=torch.float32, device=None) -> torch.Tensor:
        indices = torch.from_numpy(np.stack([self.src, self.dst]))
        values = torch.from_numpy(self.weight).to(dtype)
        return torch.sparse_coo_tensor(
            indices, values, (self.node_count, self.node_count), device=device, check_invariants=False
        ).coalesce()

    def dump_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, j, w in zip(self.src, self.dst, self.weight):
                fh.write(f"{int(i)}\t{int(j)}\t{w:.10g}\n")


@dataclass
class PerturbedGraph:
    """A transition graph with one user's adjacency counts subtracted."""

    base: SparseGraph
    removed_user: int
    raw: SparseGraph
    normalized: SparseGraph = field(repr=False, default=None)


def _from_pair_weights(pairs: dict[tuple[int, int], float], node_count: int) -> SparseGraph:
    """Build a canonical symmetric graph from {(i, j): w} over unordered pairs i < j."""
    src, dst, weight = [], [], []
    for (i, j), w in pairs.items():
        if w <= 0:
            continue
        src.extend((i, j))
        dst.extend((j, i))
        weight.extend((w, w))
    if src:
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        weight = np.asarray(weight, dtype=np.float64)
        order = np.lexsort((dst, src))
        src, dst, weight = src[order], dst[order], weight[order]
    else:
        src = np.empty(0, dtype=np.int64)
        dst = np.empty(0, dtype=np.int64)
        weight = np.empty(0, dtype=np.float64)
    return SparseGraph(node_count=node_count, src=src, dst=dst, weight=weight)


def user_transition_counts(items: list[int]) -> Counter:
    """Adjacency counts contributed by one sequence, keyed by (min, max) pair."""
    counts: Counter = Counter()
    for a, b in zip(items, items[1:]):
        if a == b:
            continue
        counts[(min(a, b), max(a, b))] += 1
    return counts


def _infer_node_count(sequences: list[UserSequence]) -> int:
    top = 0
    for s in sequences:
        if s.items:
            top = max(top, max(s.items))
    return top + 1


def build_transition_graph(sequences: list[UserSequence], node_count: int | None = None) -> SparseGraph:
    """Edge weight between two items = number of times they appear adjacently
    across all sequences. Symmetric, no self-loops, pad never touched."""
    if not sequences:
        raise ValueError("cannot build a transition graph from zero sequences")
    if node_count is None:
        node_count = _infer_node_count(sequences)
    totals: Counter = Counter()
    for seq in sequences:
        totals.update(user_transition_counts(seq.items))
    return _from_pair_weights(dict(totals), node_count)


def build_cointeraction_graph(sequences: list[UserSequence], k: int, node_count: int | None = None) -> SparseGraph:
    """Edge weight = number of users who interacted with both items, then
    per-item top-k filtering re-symmetrized by union.

    Ties at the top-k boundary are broken by (higher weight, lower id).
    An edge survives if it is in the top-k list of either endpoint.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not sequences:
        raise ValueError("cannot build a co-interaction graph from zero sequences")
    if node_count is None:
        node_count = _infer_node_count(sequences)
    co: Counter = Counter()
    for seq in sequences:
        distinct = sorted(set(seq.items))
        for ai in range(len(distinct)):
            for bi in range(ai + 1, len(distinct)):
                co[(distinct[ai], distinct[bi])] += 1
    # per-node neighbor lists from the raw symmetric counts
    neigh: dict[int, list[tuple[float, int]]] = {}
    for (i, j), w in co.items():
        neigh.setdefault(i, []).append((w, j))
        neigh.setdefault(j, []).append((w, i))
    kept: set[tuple[int, int]] = set()
    for node, lst in neigh.items():
        lst.sort(key=lambda t: (-t[0], t[1]))
        for w, other in lst[:k]:
            kept.add((min(node, other), max(node, other)))
    pairs = {pair: float(co[pair]) for pair in kept}
    return _from_pair_weights(pairs, node_count)


def normalize(graph: SparseGraph) -> SparseGraph:
    """Replace every weight w_ij by w_ij / (sqrt(d_i) * sqrt(d_j)).

    Degrees come from the unnormalized input; isolated nodes contribute
    zero (their inverse-sqrt degree is defined as 0).
    """
    if graph.normalized:
        raise GraphStateError("graph is already normalized")
    deg = graph.degrees()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    weight = graph.weight * inv_sqrt[graph.src] * inv_sqrt[graph.dst]
    return SparseGraph(
        node_count=graph.node_count,
        src=graph.src.copy(),
        dst=graph.dst.copy(),
        weight=weight,
        normalized=True,
        perturbed_for=graph.perturbed_for,
        base_degree=deg,
    )


def csr_arrays(graph: SparseGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(indptr, dst, weight) row slices; relies on the canonical edge order."""
    counts = np.zeros(graph.node_count, dtype=np.int64)
    np.add.at(counts, graph.src, 1)
    indptr = np.zeros(graph.node_count + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, graph.dst, graph.weight


def edge_index_map(graph: SparseGraph) -> dict[tuple[int, int], int]:
    return {(int(i), int(j)): pos for pos, (i, j) in enumerate(zip(graph.src, graph.dst))}


def removal_positions(
    edge_map: dict[tuple[int, int], int], pair_counts
) -> tuple[np.ndarray, np.ndarray]:
    """Edge-array positions (both directions) and amounts to subtract for one
    user's transition counts. Pairs absent from the graph are skipped (they
    can only arise when the graph was built without this user)."""
    positions, amounts = [], []
    for (i, j), count in pair_counts.items():
        for key in ((i, j), (j, i)):
            pos = edge_map.get(key)
            if pos is not None:
                positions.append(pos)
                amounts.append(float(count))
    return np.asarray(positions, dtype=np.int64), np.asarray(amounts, dtype=np.float64)


def perturbed_normalized_arrays(
    graph: SparseGraph, positions: np.ndarray, amounts: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fast path equivalent to perturb_for_user(...).normalized: subtract the
    per-edge amounts, drop empty edges, renormalize by the perturbed degrees.

    Weights are integer counts held in float64, so the subtraction and the
    zero test are exact.
    """
    if graph.normalized:
        raise GraphStateError("fast perturbation requires the unnormalized graph")
    weight = graph.weight.copy()
    if len(positions):
        weight[positions] = np.maximum(0.0, weight[positions] - amounts)
    keep = weight > 0
    src = graph.src[keep]
    dst = graph.dst[keep]
    weight = weight[keep]
    deg = np.zeros(graph.node_count, dtype=np.float64)
    np.add.at(deg, src, weight)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    return src, dst, weight * inv_sqrt[src] * inv_sqrt[dst]


def sparse_torch_from_arrays(
    src: np.ndarray, dst: np.ndarray, weight: np.ndarray, node_count: int, dtype, device=None
):
    import torch as _torch

    indices = _torch.from_numpy(np.stack([src, dst]))
    values = _torch.from_numpy(weight).to(dtype)
    return _torch.sparse_coo_tensor(
        indices, values, (node_count, node_count), device=device, check_invariants=False
    ).coalesce()


def perturb_for_user(graph: SparseGraph, sequence: UserSequence) -> PerturbedGraph:
    """Subtract one user's adjacency counts from the transition graph and
    renormalize. Edges that reach zero weight disappear."""
    if graph.normalized:
        raise GraphStateError("perturb_for_user requires the unnormalized transition graph")
    if graph.perturbed_for is not None:
        raise GraphStateError(f"graph was already perturbed for user {graph.perturbed_for}")
    removal = user_transition_counts(sequence.items)
    pairs: dict[tuple[int, int], float] = {}
    for (i, j), w in graph.as_dict().items():
        if i < j:
            pairs[(i, j)] = w
    for pair, count in removal.items():
        if pair in pairs:
            pairs[pair] = max(0.0, pairs[pair] - count)
    raw = _from_pair_weights(pairs, graph.node_count)
    raw.perturbed_for = sequence.user_id
    return PerturbedGraph(
        base=graph,
        removed_user=sequence.user_id,
        raw=raw,
        normalized=normalize(raw),
    )
