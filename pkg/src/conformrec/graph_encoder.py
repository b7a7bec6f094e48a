"""Lightweight graph convolution: repeated sparse propagation of a shared
item embedding table with no weights or nonlinearities, aggregated by the
mean over all layer outputs (layer 0 included)."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .graphs import SparseGraph


@dataclass
class GraphEmbeddings:
    layer_outputs: list[torch.Tensor]
    final: torch.Tensor


def propagate(graph: SparseGraph, base: torch.Tensor, layers: int) -> GraphEmbeddings:
    """Run `layers` rounds of normalized-adjacency message passing.

    layer_outputs[0] is the base table itself; final is the mean over
    layers 0..L. Gradients flow into `base` through every layer.
    """
    if not graph.normalized:
        raise ValueError("propagate requires a normalized graph")
    if layers < 1:
        raise ValueError("layers must be >= 1")
    if graph.node_count != base.shape[0]:
        raise ValueError(
            f"graph has {graph.node_count} nodes but base table has {base.shape[0]} rows"
        )
    adj = graph.to_torch(dtype=base.dtype, device=base.device)
    outputs = [base]
    current = base
    for _ in range(layers):
        current = torch.sparse.mm(adj, current)
        outputs.append(current)
    final = outputs[0]
    for out in outputs[1:]:
        final = final + out
    final = final / len(outputs)
    return GraphEmbeddings(layer_outputs=outputs, final=final)


def encode_both(
    transition_graph: SparseGraph,
    cointeraction_graph: SparseGraph,
    base: torch.Tensor,
    layers: int,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Propagate the same base table over both graphs; returns the two finals."""
    x = propagate(transition_graph, base, layers)
    z = propagate(cointeraction_graph, base, layers)
    return x.final, z.final
