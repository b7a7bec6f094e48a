"""Transformer encoder producing position-wise hidden states for padded
item sequences.

Attention is bidirectional over the history window with a padding mask on
the key dimension only: every query row keeps at least one valid key, so
the softmax stays finite, and masked keys receive exactly zero weight.
Residual connections and layer normalization wrap both sublayers.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass
class SequenceHiddenStates:
    hidden: torch.Tensor  # (batch, t_max, d)
    mask: torch.Tensor  # (batch, t_max) bool, True at valid positions


class MultiHeadSelfAttention(nn.Module):
    """Multi-head self-attention with head-specific query/key/value maps and
    a shared output projection. Scale factor is sqrt(d / heads)."""

    def __init__(self, embed_dim: int, heads: int, dropout: float):
        super().__init__()
        if embed_dim % heads != 0:
            raise ValueError("embed_dim must be divisible by the number of heads")
        self.embed_dim = embed_dim
        self.heads = heads
        self.head_dim = embed_dim // heads
        self.w_query = nn.Linear(embed_dim, embed_dim, bias=False)
        self.w_key = nn.Linear(embed_dim, embed_dim, bias=False)
        self.w_value = nn.Linear(embed_dim, embed_dim, bias=False)
        self.w_out = nn.Linear(embed_dim, embed_dim, bias=False)
        self.dropout = nn.Dropout(dropout)

    def forward(self, states: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        batch, t_max, _ = states.shape
        def split(x):
            return x.view(batch, t_max, self.heads, self.head_dim).transpose(1, 2)

        q = split(self.w_query(states))
        k = split(self.w_key(states))
        v = split(self.w_value(states))
        logits = torch.matmul(q, k.transpose(-1, -2)) / (self.head_dim**0.5)
        key_mask = mask[:, None, None, :]  # (batch, 1, 1, t_max)
        logits = logits.masked_fill(~key_mask, float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        weights = self.dropout(weights)
        out = torch.matmul(weights, v)
        out = out.transpose(1, 2).reshape(batch, t_max, self.embed_dim)
        return self.w_out(out)


class PositionwiseFeedForward(nn.Module):
    def __init__(self, embed_dim: int, hidden_dim: int, dropout: float):
        super().__init__()
        self.lin1 = nn.Linear(embed_dim, hidden_dim)
        self.lin2 = nn.Linear(hidden_dim, embed_dim)
        self.act = nn.GELU()
        self.dropout = nn.Dropout(dropout)

    def forward(self, states: torch.Tensor) -> torch.Tensor:
        return self.dropout(self.lin2(self.act(self.lin1(states))))


class EncoderBlock(nn.Module):
    def __init__(self, embed_dim: int, heads: int, ffn_hidden: int, dropout: float):
        super().__init__()
        self.attention = MultiHeadSelfAttention(embed_dim, heads, dropout)
        self.ffn = PositionwiseFeedForward(embed_dim, ffn_hidden, dropout)
        self.norm_attn = nn.LayerNorm(embed_dim)
        self.norm_ffn = nn.LayerNorm(embed_dim)

    def forward(self, states: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        states = self.norm_attn(states + self.attention(states, mask))
        states = self.norm_ffn(states + self.ffn(states))
        return states


class SequenceEncoder(nn.Module):
    """Stack of attention blocks over item + learned positional embeddings.

    The item table can be shared with other encoders; pass it in, or let
    the module own one. Row 0 of the item table is the pad embedding,
    pinned to zero.
    """

    def __init__(
        self,
        node_count: int,
        embed_dim: int,
        heads: int,
        blocks: int,
        ffn_hidden: int,
        t_max: int,
        dropout: float = 0.2,
        item_embedding: nn.Embedding | None = None,
    ):
        super().__init__()
        if item_embedding is None:
            item_embedding = nn.Embedding(node_count, embed_dim, padding_idx=0)
            nn.init.normal_(item_embedding.weight, std=0.02)
            with torch.no_grad():
                item_embedding.weight[0].zero_()
        self.item_embedding = item_embedding
        self.positional_embedding = nn.Embedding(t_max, embed_dim)
        nn.init.normal_(self.positional_embedding.weight, std=0.02)
        self.blocks = nn.ModuleList(
            EncoderBlock(embed_dim, heads, ffn_hidden, dropout) for _ in range(blocks)
        )
        self.t_max = t_max

    def embed_input(self, padded: torch.Tensor) -> torch.Tensor:
        """Item embedding plus positional embedding, row by row; pad rows
        carry the positional embedding only (they are masked downstream)."""
        if int(padded.max()) >= self.item_embedding.num_embeddings:
            raise IndexError("item id exceeds the embedding table")
        positions = torch.arange(padded.shape[-1], device=padded.device)
        return self.item_embedding(padded) + self.positional_embedding(positions)

    def forward(self, padded: torch.Tensor, lengths: torch.Tensor) -> SequenceHiddenStates:
        if padded.dim() == 1:
            padded = padded.unsqueeze(0)
            lengths = lengths.reshape(1)
        positions = torch.arange(padded.shape[1], device=padded.device)
        mask = positions[None, :] < lengths[:, None]
        states = self.embed_input(padded)
        for block in self.blocks:
            states = block(states, mask)
        return SequenceHiddenStates(hidden=states, mask=mask)
