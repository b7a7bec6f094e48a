"""Composite recommender: shared item table, sequence encoder, optional
separate graph tables, and the attentive fusion head."""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import TrainConfig
from .objectives import AttentiveFusion
from .seq_encoder import SequenceEncoder


class Recommender(nn.Module):
    """All trainable state for one catalog.

    The item table (row 0 = pad, pinned to zero) seeds the sequence
    encoder and, unless `separate_graph_tables` is set, both graph
    propagations; candidate scoring always uses this shared table.
    """

    def __init__(self, node_count: int, config: TrainConfig):
        super().__init__()
        config.validate()
        self.node_count = node_count
        self.config = config
        self.item_embedding = nn.Embedding(node_count, config.embed_dim, padding_idx=0)
        nn.init.normal_(self.item_embedding.weight, std=0.02)
        with torch.no_grad():
            self.item_embedding.weight[0].zero_()
        self.encoder = SequenceEncoder(
            node_count=node_count,
            embed_dim=config.embed_dim,
            heads=config.heads,
            blocks=config.transformer_layers,
            ffn_hidden=config.ffn_hidden,
            t_max=config.t_max,
            dropout=config.dropout,
            item_embedding=self.item_embedding,
        )
        self.fusion = AttentiveFusion(config.embed_dim)
        if config.separate_graph_tables:
            self.transition_embedding = nn.Embedding(node_count, config.embed_dim, padding_idx=0)
            self.cointeraction_embedding = nn.Embedding(node_count, config.embed_dim, padding_idx=0)
            for table in (self.transition_embedding, self.cointeraction_embedding):
                nn.init.normal_(table.weight, std=0.02)
                with torch.no_grad():
                    table.weight[0].zero_()
        else:
            self.transition_embedding = None
            self.cointeraction_embedding = None

    def graph_bases(self) -> tuple[torch.Tensor, torch.Tensor]:
        if self.transition_embedding is not None:
            return self.transition_embedding.weight, self.cointeraction_embedding.weight
        return self.item_embedding.weight, self.item_embedding.weight
