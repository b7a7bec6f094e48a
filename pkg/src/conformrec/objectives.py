"""Loss assembly: adaptive cross-view contrastive terms, attentive view
fusion, candidate scoring, the next-item cross-entropy, and the joint
objective.

Cosine similarity is used inside the contrastive terms only; the
prediction path scores candidates with unnormalized dot products.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

NEG_INF = float("-inf")


class ContractViolation(Exception):
    pass


class NonFiniteLossError(Exception):
    def __init__(self, bundle_repr: str):
        super().__init__(f"non-finite loss component: {bundle_repr}")


@dataclass
class LossBundle:
    l_rec: torch.Tensor
    l_u: torch.Tensor
    l_v: torch.Tensor
    l_w: torch.Tensor
    total: torch.Tensor
    lambda1: float
    lambda2: float
    tau: float

    def as_floats(self) -> dict[str, float]:
        return {
            "L_rec": float(self.l_rec.detach()),
            "L_u": float(self.l_u.detach()),
            "L_v": float(self.l_v.detach()),
            "L_w": float(self.l_w.detach()),
            "total": float(self.total.detach()),
        }


def _candidate_rows(table: torch.Tensor, items: torch.Tensor, negatives: str):
    """Candidate item ids (internal, >= 1) and their table rows."""
    if negatives == "full_catalog":
        ids = torch.arange(1, table.shape[0], device=table.device)
    elif negatives == "in_batch":
        ids = torch.unique(items)
    else:
        raise ValueError(f"unknown negatives mode: {negatives!r}")
    return ids, table[ids]


def _weighted_info_nce(
    anchors: torch.Tensor,
    positives_idx: torch.Tensor,
    candidate_rows: torch.Tensor,
    weights: torch.Tensor,
    tau: float,
) -> torch.Tensor:
    anchors = F.normalize(anchors, dim=-1)
    candidates = F.normalize(candidate_rows, dim=-1)
    logits = anchors @ candidates.T / tau
    log_probs = torch.log_softmax(logits, dim=-1)
    picked = log_probs.gather(1, positives_idx.unsqueeze(1)).squeeze(1)
    return -(weights * picked).sum()


def contrastive_user_dim(
    hidden: torch.Tensor,
    transition_table: torch.Tensor,
    items: torch.Tensor,
    omega: torch.Tensor,
    tau: float,
    negatives: str = "full_catalog",
) -> torch.Tensor:
    """Conformity-weighted InfoNCE between sequence hidden states and the
    transition-graph embeddings of the items at the same positions.

    `hidden` is (M, d) over valid (user, position) anchors only, `items`
    their internal item ids. The denominator runs over every real item
    (full_catalog) or the batch's unique items (in_batch); the positive is
    always included. Returns the sum over anchors.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if hidden.numel() == 0:
        return torch.zeros((), dtype=transition_table.dtype, device=transition_table.device)
    cand_ids, cand_rows = _candidate_rows(transition_table, items, negatives)
    pos_idx = torch.searchsorted(cand_ids, items)
    return _weighted_info_nce(hidden, pos_idx, cand_rows, omega, tau)


def contrastive_item_dim(
    transition_table: torch.Tensor,
    cointeraction_table: torch.Tensor,
    items: torch.Tensor,
    psi: torch.Tensor,
    tau: float,
    negatives: str = "full_catalog",
) -> torch.Tensor:
    """Uniformity-weighted InfoNCE between the two graph views of each
    anchor item; mirror of the user-dimension loss with weight psi."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if items.numel() == 0:
        return torch.zeros((), dtype=transition_table.dtype, device=transition_table.device)
    cand_ids, cand_rows = _candidate_rows(cointeraction_table, items, negatives)
    pos_idx = torch.searchsorted(cand_ids, items)
    return _weighted_info_nce(transition_table[items], pos_idx, cand_rows, psi, tau)


class AttentiveFusion(nn.Module):
    """Learned convex combination of the three per-item views."""

    def __init__(self, embed_dim: int):
        super().__init__()
        self.attention_vector = nn.Parameter(torch.empty(embed_dim))
        self.transform = nn.Linear(embed_dim, embed_dim, bias=False)
        nn.init.normal_(self.attention_vector, std=0.02)

    def forward(self, h: torch.Tensor, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        views = torch.stack([h, x, z], dim=-2)  # (..., 3, d)
        scores = (self.transform(views) * self.attention_vector).sum(dim=-1)
        weights = torch.softmax(scores, dim=-1)
        return (weights.unsqueeze(-1) * views).sum(dim=-2)

    def view_weights(self, h, x, z) -> torch.Tensor:
        views = torch.stack([h, x, z], dim=-2)
        scores = (self.transform(views) * self.attention_vector).sum(dim=-1)
        return torch.softmax(scores, dim=-1)


def fuse_views(h: torch.Tensor, x: torch.Tensor, z: torch.Tensor, fusion: AttentiveFusion) -> torch.Tensor:
    return fusion(h, x, z)


def score_candidates(p_last: torch.Tensor, item_table: torch.Tensor, exclude_pad: bool = True) -> torch.Tensor:
    """Dot-product scores of the fused user state against every item row.

    The pad row's score is forced to -inf so it can never be ranked or
    predicted.
    """
    scores = p_last @ item_table.T
    if exclude_pad:
        if scores.dim() == 1:
            scores = torch.cat([scores.new_full((1,), NEG_INF), scores[1:]])
        else:
            scores = torch.cat([scores.new_full((scores.shape[0], 1), NEG_INF), scores[:, 1:]], dim=1)
    return scores


def recommendation_loss(scores: torch.Tensor, targets: torch.Tensor, pad_index: int | None = 0) -> torch.Tensor:
    """Softmax cross-entropy of the target items, averaged over the batch.

    `pad_index` is the reserved column that must never be a target; pass
    None when scoring a raw vector with no pad column.
    """
    if scores.dim() == 1:
        scores = scores.unsqueeze(0)
        targets = targets.reshape(1)
    if pad_index is not None and bool((targets == pad_index).any()):
        raise ContractViolation("pad token appeared as a prediction target")
    return F.cross_entropy(scores, targets)


def total_loss(
    l_rec: torch.Tensor,
    l_u: torch.Tensor,
    l_v: torch.Tensor,
    l_w: torch.Tensor,
    lambda1: float,
    lambda2: float,
    tau: float = 1.0,
) -> LossBundle:
    """Joint objective: L_rec + lambda1 * (L_u + L_v) + lambda2 * L_w."""
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("loss weights must be nonnegative")
    total = l_rec + lambda1 * (l_u + l_v) + lambda2 * l_w
    bundle = LossBundle(l_rec, l_u, l_v, l_w, total, lambda1, lambda2, tau)
    for name, value in bundle.as_floats().items():
        if not torch.isfinite(torch.tensor(value)):
            raise NonFiniteLossError(f"{name}={value} in {bundle.as_floats()}")
    return bundle
