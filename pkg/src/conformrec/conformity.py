"""Multi-channel conformity weighting.

Three cosine channels score how popularity-driven one (user, position)
interaction looks:

  alpha: stability of the target item's transition-graph embedding when
          the user's own edges are removed from the graph,
  beta:  agreement between the mean embedding of the item's neighbors
          inside the user's sequence and the mean over its outer
          neighbors (graph neighbors reached through other users),
  gamma: agreement between the item's own embedding and that outer mean.

Channel means are passed through sigmoid, min-max scaled over the batch,
then rescaled so the batch mean equals the configured target mu_c. The
complement (1 - weight) is clipped to [0, 1] and weights the item-side
contrastive loss. A KL term pulls the weights toward draws from
N(mu_c, sigma).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .graphs import SparseGraph

EPS = 1e-8


@dataclass
class DegenerateCounter:
    """Counts inputs that forced a channel to its 0.0 fallback."""

    counts: dict[str, int] = field(default_factory=dict)

    def bump(self, channel: str, amount: int = 1) -> None:
        if amount:
            self.counts[channel] = self.counts.get(channel, 0) + int(amount)

    def total(self) -> int:
        return sum(self.counts.values())


@dataclass
class NeighborContext:
    """Within-sequence and cross-user neighborhoods of one anchor position."""

    inner_items: list[int]
    outer_items: list[int]


@dataclass
class ConformityWeights:
    users: torch.Tensor  # (M,) long
    positions: torch.Tensor  # (M,) long
    omega: torch.Tensor  # (M,) final weights, batch mean == mu_c
    psi: torch.Tensor  # (M,) clip(1 - omega, 0, 1)
    raw_alpha: torch.Tensor
    raw_beta: torch.Tensor
    raw_gamma: torch.Tensor
    degenerate: DegenerateCounter = field(default_factory=DegenerateCounter)

    def entries(self) -> dict[tuple[int, int], float]:
        return {
            (int(u), int(p)): float(w)
            for u, p, w in zip(self.users, self.positions, self.omega)
        }


def rowwise_cosine(a: torch.Tensor, b: torch.Tensor, counter: DegenerateCounter | None = None, channel: str = "") -> torch.Tensor:
    """Cosine similarity per row; rows where either vector is zero map to 0."""
    single = a.dim() == 1
    if single:
        a = a.unsqueeze(0)
        b = b.unsqueeze(0)
    na = a.norm(dim=-1)
    nb = b.norm(dim=-1)
    ok = (na > 0) & (nb > 0)
    denom = (na * nb).clamp_min(EPS)
    cos = (a * b).sum(dim=-1) / denom
    cos = torch.where(ok, cos, torch.zeros_like(cos))
    if counter is not None:
        counter.bump(channel or "cosine", int((~ok).sum()))
    return cos[0] if single else cos


def channel_alpha(
    x_v: torch.Tensor,
    x_v_prime: torch.Tensor,
    counter: DegenerateCounter | None = None,
) -> torch.Tensor:
    """Similarity between the item's embedding from the full transition graph
    and from the graph with the user's edges removed."""
    return rowwise_cosine(x_v, x_v_prime, counter, "alpha")


def channel_gamma(
    x_v: torch.Tensor,
    outer_mean: torch.Tensor,
    counter: DegenerateCounter | None = None,
) -> torch.Tensor:
    """Similarity between the item's embedding and its outer-neighbor mean."""
    return rowwise_cosine(x_v, outer_mean, counter, "gamma")


def build_neighbor_context(
    items: list[int],
    position: int,
    graph: SparseGraph,
    user_pair_counts=None,
) -> NeighborContext:
    """Inner neighbors are the items at the adjacent sequence positions;
    outer neighbors are graph neighbors of the anchor item whose edge
    survives removal of this user's own transition counts."""
    if not 0 <= position < len(items):
        raise IndexError(f"position {position} outside sequence of length {len(items)}")
    item = items[position]
    inner = []
    if position > 0:
        inner.append(items[position - 1])
    if position + 1 < len(items):
        inner.append(items[position + 1])
    outer = []
    for j, w in graph.neighbors(item):
        contributed = 0
        if user_pair_counts:
            contributed = user_pair_counts.get((min(item, j), max(item, j)), 0)
        if w - contributed > 0:
            outer.append(j)
    outer.sort()
    return NeighborContext(inner_items=inner, outer_items=outer)


def channel_beta(
    items: list[int],
    position: int,
    gt_embeddings: torch.Tensor,
    context: NeighborContext,
    counter: DegenerateCounter | None = None,
) -> torch.Tensor:
    """Similarity between the inner-neighbor mean and the outer-neighbor mean."""
    if not context.inner_items or not context.outer_items:
        if counter is not None:
            counter.bump("beta")
        return torch.zeros((), dtype=gt_embeddings.dtype, device=gt_embeddings.device)
    inner = gt_embeddings[torch.as_tensor(context.inner_items, device=gt_embeddings.device)].mean(dim=0)
    outer = gt_embeddings[torch.as_tensor(context.outer_items, device=gt_embeddings.device)].mean(dim=0)
    return rowwise_cosine(inner, outer, counter, "beta")


def segment_mean(
    table: torch.Tensor,
    flat_items: torch.Tensor,
    segment_ids: torch.Tensor,
    segment_count: int,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean of table rows grouped by segment; empty segments give zero rows.

    Returns (means (segment_count, d), nonempty mask (segment_count,)).
    """
    d = table.shape[1]
    sums = torch.zeros(segment_count, d, dtype=table.dtype, device=table.device)
    counts = torch.zeros(segment_count, dtype=table.dtype, device=table.device)
    if flat_items.numel():
        sums.index_add_(0, segment_ids, table[flat_items])
        counts.index_add_(
            0, segment_ids, torch.ones(len(flat_items), dtype=table.dtype, device=table.device)
        )
    nonempty = counts > 0
    means = sums / counts.clamp_min(1.0).unsqueeze(1)
    return means, nonempty


def mix_and_transform(
    raw: torch.Tensor,
    mu_c: float,
    users: torch.Tensor | None = None,
    positions: torch.Tensor | None = None,
    degenerate: DegenerateCounter | None = None,
) -> ConformityWeights:
    """Mean-pool the three channels, squash, min-max scale over the batch,
    then rescale the batch mean to mu_c.

    An all-equal batch (min == max) maps to the constant 0.5 before the
    mean rescale, so the output is constant mu_c and never NaN. The final
    weights may exceed 1; the complement psi is clipped at 0.
    """
    if raw.numel() == 0:
        raise ValueError("mix_and_transform requires a non-empty batch")
    if not 0.0 < mu_c < 1.0:
        raise ValueError("mu_c must lie strictly inside (0, 1)")
    if raw.dim() == 1:
        raw = raw.unsqueeze(0)
    if raw.shape[1] != 3:
        raise ValueError("raw must have one column per channel (alpha, beta, gamma)")
    mixed = raw.mean(dim=1)
    squashed = torch.sigmoid(mixed)
    lo = squashed.min()
    hi = squashed.max()
    if bool(hi == lo):
        scaled = torch.full_like(squashed, 0.5)
    else:
        scaled = (squashed - lo) / (hi - lo)
    omega = mu_c / scaled.mean() * scaled
    psi = (1.0 - omega).clamp(0.0, 1.0)
    m = len(omega)
    if users is None:
        users = torch.zeros(m, dtype=torch.long)
    if positions is None:
        positions = torch.arange(m, dtype=torch.long)
    return ConformityWeights(
        users=users,
        positions=positions,
        omega=omega,
        psi=psi,
        raw_alpha=raw[:, 0],
        raw_beta=raw[:, 1],
        raw_gamma=raw[:, 2],
        degenerate=degenerate or DegenerateCounter(),
    )


def kl_regularizer(
    omega: torch.Tensor | ConformityWeights,
    mu_c: float,
    sigma: float,
    seed: int | None = None,
    generator: torch.Generator | None = None,
    phi: torch.Tensor | None = None,
) -> torch.Tensor:
    """KL-style pull of the weights toward samples from N(mu_c, sigma).

    phi is sampled fresh per call (deterministic under `seed`/`generator`)
    and clamped to [EPS, 1]; it never carries gradient, so the loss shapes
    omega only. Passing `phi` explicitly is a test hook: the given values
    are used as-is apart from the positivity floor.
    """
    if isinstance(omega, ConformityWeights):
        omega = omega.omega
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if phi is None:
        if generator is None and seed is not None:
            generator = torch.Generator(device=omega.device)
            generator.manual_seed(seed)
        noise = torch.randn(omega.shape, generator=generator, dtype=omega.dtype, device=omega.device)
        phi = (mu_c + sigma * noise).clamp(EPS, 1.0)
    else:
        phi = phi.clamp_min(EPS)
    phi = phi.detach()
    om = omega.clamp_min(EPS)
    return (phi * torch.log(phi / om)).sum()
