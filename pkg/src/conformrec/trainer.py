"""End-to-end training loop.

Per batch: propagate both graphs, encode the batch sequences, rebuild each
user's perturbed transition graph for the stability channel, produce the
conformity weights and their KL pull, assemble both contrastive terms,
fuse the three views at the last position, score the catalog, and step the
optimizer on the joint objective. Graphs and neighbor contexts are static
per dataset and precomputed once.
"""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass

import numpy as np
import torch

from .config import ConfigError, TrainConfig
from .conformity import (
    ConformityWeights,
    DegenerateCounter,
    kl_regularizer,
    mix_and_transform,
    rowwise_cosine,
    segment_mean,
)
from .data import SplitDataset, TargetExample
from .evaluation import MetricReport, rank_metrics, sliced_report
from .graph_encoder import propagate
from .graphs import (
    SparseGraph,
    build_cointeraction_graph,
    build_transition_graph,
    edge_index_map,
    normalize,
    perturbed_normalized_arrays,
    removal_positions,
    user_transition_counts,
)
from .model import Recommender
from .objectives import (
    NonFiniteLossError,
    contrastive_item_dim,
    contrastive_user_dim,
    recommendation_loss,
    score_candidates,
    total_loss,
)


class TrainingAborted(Exception):
    def __init__(self, message: str, checkpoint: dict | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class UserContext:
    """Static per-user training context in internal item ids."""

    user_id: int
    history: np.ndarray  # full training history
    input_items: np.ndarray  # history[:-1], fed to the encoder
    target: int  # history[-1]
    anchor_items: np.ndarray  # == input_items
    inner_flat: np.ndarray
    inner_offsets: np.ndarray
    outer_flat: np.ndarray
    outer_offsets: np.ndarray
    removal_pos: np.ndarray
    removal_amt: np.ndarray


@dataclass
class TrainAssets:
    node_count: int
    gt_raw: SparseGraph
    gt_norm: SparseGraph
    gc_norm: SparseGraph
    contexts: list[UserContext]
    padded_inputs: torch.Tensor  # (train_users, t_max)
    input_lengths: torch.Tensor
    targets: torch.Tensor
    t_max: int

    @property
    def train_user_count(self) -> int:
        return len(self.contexts)


def build_assets(split: SplitDataset, config: TrainConfig) -> TrainAssets:
    node_count = split.catalog_size + 1
    gt_raw = build_transition_graph(split.train_sequences, node_count)
    gt_norm = normalize(gt_raw)
    gc_norm = normalize(build_cointeraction_graph(split.train_sequences, config.k, node_count))
    edge_map = edge_index_map(gt_raw)
    neighbor_cache: dict[int, list[tuple[int, float]]] = {}

    def neighbors(item: int) -> list[tuple[int, float]]:
        if item not in neighbor_cache:
            neighbor_cache[item] = gt_raw.neighbors(item)
        return neighbor_cache[item]

    contexts = []
    padded, lengths, targets = [], [], []
    for seq in split.train_sequences:
        history = np.asarray(seq.items, dtype=np.int64)
        if len(history) < 2:
            continue  # no (input, label) pair; the user is still evaluated
        input_items = history[:-1]
        pair_counts = user_transition_counts(list(history))
        removal_pos, removal_amt = removal_positions(edge_map, pair_counts)
        inner_flat, inner_off = [], [0]
        outer_flat, outer_off = [], [0]
        for pos in range(len(input_items)):
            item = int(history[pos])
            if pos > 0:
                inner_flat.append(int(history[pos - 1]))
            inner_flat.append(int(history[pos + 1]))
            inner_off.append(len(inner_flat))
            for j, w in neighbors(item):
                contributed = pair_counts.get((min(item, j), max(item, j)), 0)
                if w - contributed > 0:
                    outer_flat.append(j)
            outer_off.append(len(outer_flat))
        contexts.append(
            UserContext(
                user_id=seq.user_id,
                history=history,
                input_items=input_items,
                target=int(history[-1]),
                anchor_items=input_items,
                inner_flat=np.asarray(inner_flat, dtype=np.int64),
                inner_offsets=np.asarray(inner_off, dtype=np.int64),
                outer_flat=np.asarray(outer_flat, dtype=np.int64),
                outer_offsets=np.asarray(outer_off, dtype=np.int64),
                removal_pos=removal_pos,
                removal_amt=removal_amt,
            )
        )
        row = np.zeros(config.t_max, dtype=np.int64)
        row[: len(input_items)] = input_items
        padded.append(row)
        lengths.append(len(input_items))
        targets.append(int(history[-1]))
    if not contexts:
        raise ValueError("no user has a training history of at least 2 items")
    return TrainAssets(
        node_count=node_count,
        gt_raw=gt_raw,
        gt_norm=gt_norm,
        gc_norm=gc_norm,
        contexts=contexts,
        padded_inputs=torch.from_numpy(np.stack(padded)),
        input_lengths=torch.as_tensor(lengths, dtype=torch.long),
        targets=torch.as_tensor(targets, dtype=torch.long),
        t_max=config.t_max,
    )


def _batch_anchor_arrays(assets: TrainAssets, rows: np.ndarray):
    """Concatenate the per-user anchor/context arrays for one batch."""
    items, row_index, positions = [], [], []
    inner_flat, inner_seg, outer_flat, outer_seg = [], [], [], []
    users = []
    offset = 0
    for b, row in enumerate(rows):
        ctx = assets.contexts[row]
        n = len(ctx.anchor_items)
        items.append(ctx.anchor_items)
        row_index.append(np.full(n, b, dtype=np.int64))
        positions.append(np.arange(n, dtype=np.int64))
        users.append(np.full(n, ctx.user_id, dtype=np.int64))
        inner_flat.append(ctx.inner_flat)
        inner_counts = np.diff(ctx.inner_offsets)
        inner_seg.append(np.repeat(np.arange(n, dtype=np.int64) + offset, inner_counts))
        outer_flat.append(ctx.outer_flat)
        outer_counts = np.diff(ctx.outer_offsets)
        outer_seg.append(np.repeat(np.arange(n, dtype=np.int64) + offset, outer_counts))
        offset += n
    cat = np.concatenate
    return {
        "items": torch.from_numpy(cat(items)),
        "row_index": torch.from_numpy(cat(row_index)),
        "positions": torch.from_numpy(cat(positions)),
        "users": torch.from_numpy(cat(users)),
        "inner_flat": torch.from_numpy(cat(inner_flat)),
        "inner_seg": torch.from_numpy(cat(inner_seg)),
        "outer_flat": torch.from_numpy(cat(outer_flat)),
        "outer_seg": torch.from_numpy(cat(outer_seg)),
        "count": offset,
    }


def _perturbed_finals(
    assets: TrainAssets,
    rows: np.ndarray,
    base: torch.Tensor,
    layers: int,
) -> torch.Tensor:
    """Anchor-aligned rows of each user's perturbed-graph propagation."""
    pieces = []
    for row in rows:
        ctx = assets.contexts[row]
        src, dst, weight = perturbed_normalized_arrays(assets.gt_raw, ctx.removal_pos, ctx.removal_amt)
        graph = SparseGraph(
            node_count=assets.node_count,
            src=src,
            dst=dst,
            weight=weight,
            normalized=True,
            perturbed_for=ctx.user_id,
        )
        final = propagate(graph, base, layers).final
        pieces.append(final[torch.from_numpy(ctx.anchor_items)])
    return torch.cat(pieces, dim=0)


def compute_batch_losses(
    model: Recommender,
    assets: TrainAssets,
    config: TrainConfig,
    rows: np.ndarray,
    phi_seed: int | None = None,
    force_conformity: float | None = None,
    collect_weights: bool = False,
):
    """One forward pass over a batch of users; returns (LossBundle, weights).

    `force_conformity` replaces the weighting network output by a constant
    (the adaptive-weighting ablation uses 0.5); the channels are then not
    computed at all, but the KL term still sees the constant so the forced
    run is bit-for-bit the ablated run.
    """
    rows = np.asarray(rows)
    ablate = config.ablate
    if ablate == "adaptive-cl" and force_conformity is None:
        force_conformity = 0.5
    base_t, base_c = model.graph_bases()
    dtype = base_t.dtype
    x_final = propagate(assets.gt_norm, base_t, config.gnn_layers).final
    z_final = propagate(assets.gc_norm, base_c, config.gnn_layers).final

    padded = assets.padded_inputs[rows]
    lengths = assets.input_lengths[rows]
    encoded = model.encoder(padded, lengths)
    hidden = encoded.hidden

    arrays = _batch_anchor_arrays(assets, rows)
    anchor_items = arrays["items"]
    anchor_h = hidden[arrays["row_index"], arrays["positions"]]

    need_u = config.lambda1 > 0 and ablate not in ("t-cl", "cl")
    need_v = config.lambda1 > 0 and ablate not in ("c-cl", "cl")
    need_kl = config.lambda2 > 0
    weights = None
    zero = torch.zeros((), dtype=dtype)

    if force_conformity is not None:
        m = arrays["count"]
        omega = torch.full((m,), float(force_conformity), dtype=dtype)
        psi = torch.full((m,), 1.0 - float(force_conformity), dtype=dtype)
        weights = ConformityWeights(
            users=arrays["users"],
            positions=arrays["positions"],
            omega=omega,
            psi=psi,
            raw_alpha=torch.zeros(m, dtype=dtype),
            raw_beta=torch.zeros(m, dtype=dtype),
            raw_gamma=torch.zeros(m, dtype=dtype),
        )
    elif need_u or need_v or need_kl:
        counter = DegenerateCounter()
        x_anchor = x_final[anchor_items]
        x_prime = _perturbed_finals(assets, rows, base_t, config.gnn_layers)
        raw_alpha = rowwise_cosine(x_anchor, x_prime, counter, "alpha")
        inner_mean, inner_ok = segment_mean(x_final, arrays["inner_flat"], arrays["inner_seg"], arrays["count"])
        outer_mean, outer_ok = segment_mean(x_final, arrays["outer_flat"], arrays["outer_seg"], arrays["count"])
        context_ok = inner_ok & outer_ok
        raw_beta = rowwise_cosine(inner_mean, outer_mean, counter, "beta")
        raw_beta = torch.where(context_ok, raw_beta, torch.zeros_like(raw_beta))
        counter.bump("beta", int((~context_ok).sum()))
        raw_gamma = rowwise_cosine(x_anchor, outer_mean, counter, "gamma")
        raw_gamma = torch.where(outer_ok, raw_gamma, torch.zeros_like(raw_gamma))
        counter.bump("gamma", int((~outer_ok).sum()))
        weights = mix_and_transform(
            torch.stack([raw_alpha, raw_beta, raw_gamma], dim=1),
            config.mu_c,
            users=arrays["users"],
            positions=arrays["positions"],
            degenerate=counter,
        )

    if weights is not None:
        omega_cl = weights.omega.detach() if config.detach_conformity else weights.omega
        psi_cl = weights.psi.detach() if config.detach_conformity else weights.psi
        if need_kl:
            generator = None
            if phi_seed is not None:
                generator = torch.Generator()
                generator.manual_seed(int(phi_seed) % (2**63 - 1))
            l_w = kl_regularizer(weights.omega, config.mu_c, config.sigma, generator=generator)
        else:
            l_w = zero
    else:
        omega_cl = psi_cl = None
        l_w = zero

    l_u = (
        contrastive_user_dim(anchor_h, x_final, anchor_items, omega_cl, config.tau, config.negatives)
        if need_u
        else zero
    )
    l_v = (
        contrastive_item_dim(x_final, z_final, anchor_items, psi_cl, config.tau, config.negatives)
        if need_v
        else zero
    )

    last_pos = lengths - 1
    batch_idx = torch.arange(len(rows))
    h_last = hidden[batch_idx, last_pos]
    last_items = padded[batch_idx, last_pos]
    p_last = model.fusion(h_last, x_final[last_items], z_final[last_items])
    scores = score_candidates(p_last, model.item_embedding.weight)
    l_rec = recommendation_loss(scores, assets.targets[rows])

    bundle = total_loss(l_rec, l_u, l_v, l_w, config.lambda1, config.lambda2, config.tau)
    return bundle, (weights if collect_weights else None)


def graph_finals(model: Recommender, assets: TrainAssets, config: TrainConfig):
    with torch.no_grad():
        base_t, base_c = model.graph_bases()
        x_final = propagate(assets.gt_norm, base_t, config.gnn_layers).final
        z_final = propagate(assets.gc_norm, base_c, config.gnn_layers).final
    return x_final, z_final


def score_targets(
    model: Recommender,
    x_final: torch.Tensor,
    z_final: torch.Tensor,
    targets: list[TargetExample],
    t_max: int,
    batch_size: int = 512,
) -> np.ndarray:
    """Full-catalog scores for each target's history; pad column is -inf."""
    model.eval()
    out = []
    with torch.no_grad():
        for lo in range(0, len(targets), batch_size):
            chunk = targets[lo : lo + batch_size]
            padded = torch.zeros(len(chunk), t_max, dtype=torch.long)
            lengths = torch.zeros(len(chunk), dtype=torch.long)
            last_items = torch.zeros(len(chunk), dtype=torch.long)
            for i, t in enumerate(chunk):
                history = t.history[-t_max:]
                padded[i, : len(history)] = torch.as_tensor(history)
                lengths[i] = len(history)
                last_items[i] = history[-1]
            hidden = model.encoder(padded, lengths).hidden
            h_last = hidden[torch.arange(len(chunk)), lengths - 1]
            p_last = model.fusion(h_last, x_final[last_items], z_final[last_items])
            scores = score_candidates(p_last, model.item_embedding.weight)
            out.append(scores.double().numpy())
    return np.concatenate(out, axis=0)


def estimate_memory_gb(config: TrainConfig, node_count: int) -> float:
    d = config.embed_dim
    params = node_count * d * (3 if config.separate_graph_tables else 1)
    params += config.t_max * d
    params += config.transformer_layers * (4 * d * d + 2 * d * config.ffn_hidden + config.ffn_hidden + 5 * d)
    params += d * d + d
    batch = config.batch_size
    anchors = batch * config.t_max
    activations = (
        anchors * node_count  # contrastive logits
        + batch * (config.gnn_layers + 1) * node_count * d  # perturbed propagations
        + 2 * (config.gnn_layers + 1) * node_count * d  # full propagations
        + batch * config.t_max * d * config.transformer_layers * 8
    )
    return 4.0 * (3 * params + activations) / 1024**3


def check_memory(config: TrainConfig, node_count: int) -> None:
    estimate = estimate_memory_gb(config, node_count)
    if estimate > config.memory_limit_gb:
        raise ConfigError(
            f"estimated training footprint ~{estimate:.1f} GiB exceeds the "
            f"{config.memory_limit_gb:.1f} GiB limit; shrink batch_size, t_max or the catalog"
        )


def _phi_seed(seed: int, epoch: int, step: int) -> int:
    return (seed * 1_000_003 + epoch * 10_007 + step * 101) % (2**62)


def build_checkpoint(
    model: Recommender,
    config: TrainConfig,
    assets: TrainAssets,
    epoch: int,
    best_metric: float,
    history: list[dict],
    index_to_item: list[str] | None = None,
    aborted: bool = False,
) -> dict:
    x_final, z_final = graph_finals(model, assets, config)
    fusion_vector = model.fusion.attention_vector.detach().clone()
    fusion_matrix = model.fusion.transform.weight.detach().clone()
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    return {
        "model_state": state,
        "manifest": {k: list(v.shape) for k, v in state.items()},
        "config": config.canonical_dict(),
        "node_count": model.node_count,
        "epoch": epoch,
        "best_metric": best_metric,
        "history": history,
        "item_table": model.item_embedding.weight.detach().clone(),
        "x_final": x_final,
        "z_final": z_final,
        "fusion_vector": fusion_vector,
        "fusion_matrix": fusion_matrix,
        "index_to_item": index_to_item,
        "aborted": aborted,
    }


def save_checkpoint(checkpoint: dict, path) -> None:
    torch.save(checkpoint, path)


def load_checkpoint(path) -> dict:
    return torch.load(path, map_location="cpu", weights_only=False)


def model_from_checkpoint(checkpoint: dict) -> tuple[Recommender, TrainConfig]:
    config = TrainConfig(**checkpoint["config"])
    model = Recommender(checkpoint["node_count"], config)
    model.load_state_dict(checkpoint["model_state"])
    model.eval()
    return model, config


def steps_per_epoch(assets: TrainAssets, config: TrainConfig) -> int:
    return math.ceil(assets.train_user_count / config.batch_size)


def train(
    config: TrainConfig,
    split: SplitDataset,
    out_dir: str | None = None,
    index_to_item: list[str] | None = None,
    dump_conformity: bool = False,
    quiet: bool = True,
) -> dict:
    """Run the full loop and return the best checkpoint (also written to
    out_dir when given, together with the loss log and metrics report)."""
    config.validate()
    node_count = split.catalog_size + 1
    check_memory(config, node_count)
    torch.manual_seed(config.seed)
    assets = build_assets(split, config)
    model = Recommender(node_count, config)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    shuffle_rng = np.random.default_rng(config.seed)

    loss_log = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        loss_log = open(os.path.join(out_dir, "loss_log.jsonl"), "w", encoding="utf-8")

    history: list[dict] = []
    best_metric = -float("inf")
    best_state = None
    best_epoch = -1
    bad_epochs = 0
    step = 0
    last_good_epoch_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    try:
        for epoch in range(config.max_epochs):
            model.train()
            order = shuffle_rng.permutation(assets.train_user_count)
            epoch_totals = []
            epoch_weights = [] if dump_conformity else None
            for lo in range(0, assets.train_user_count, config.batch_size):
                rows = order[lo : lo + config.batch_size]
                optimizer.zero_grad()
                try:
                    bundle, weights = compute_batch_losses(
                        model,
                        assets,
                        config,
                        rows,
                        phi_seed=_phi_seed(config.seed, epoch, step),
                        collect_weights=dump_conformity,
                    )
                except NonFiniteLossError as exc:
                    model.load_state_dict(last_good_epoch_state)
                    checkpoint = build_checkpoint(
                        model, config, assets, epoch, best_metric, history, index_to_item, aborted=True
                    )
                    if out_dir:
                        save_checkpoint(checkpoint, os.path.join(out_dir, "checkpoint.pt"))
                    raise TrainingAborted(str(exc), checkpoint) from exc
                bundle.total.backward()
                optimizer.step()
                epoch_totals.append(float(bundle.total.detach()))
                if loss_log:
                    loss_log.write(json.dumps({"step": step, **bundle.as_floats()}) + "\n")
                if dump_conformity and weights is not None:
                    epoch_weights.append(weights)
                step += 1
            x_final, z_final = graph_finals(model, assets, config)
            valid_scores = score_targets(model, x_final, z_final, split.valid_targets, config.t_max)
            valid_targets = np.asarray([t.target for t in split.valid_targets])
            report = rank_metrics(valid_scores, valid_targets, (1, 5, 10), pad_col=0)
            metric = report.ndcg[10]
            history.append(
                {
                    "epoch": epoch,
                    "train_loss": float(np.mean(epoch_totals)),
                    "valid_ndcg10": metric,
                    "valid_hr10": report.hr[10],
                }
            )
            if not quiet:
                print(f"epoch {epoch}: loss={history[-1]['train_loss']:.4f} valid NDCG@10={metric:.4f}")
            if dump_conformity and out_dir and epoch_weights:
                _write_conformity_csv(os.path.join(out_dir, f"conformity_epoch{epoch}.csv"), epoch_weights)
            last_good_epoch_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            if metric > best_metric:
                best_metric = metric
                best_state = copy.deepcopy(last_good_epoch_state)
                best_epoch = epoch
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs > config.patience:
                    break
    finally:
        if loss_log:
            loss_log.close()

    if best_state is not None:
        model.load_state_dict(best_state)
    checkpoint = build_checkpoint(model, config, assets, best_epoch, best_metric, history, index_to_item)
    if out_dir:
        save_checkpoint(checkpoint, os.path.join(out_dir, "checkpoint.pt"))
        x_final, z_final = checkpoint["x_final"], checkpoint["z_final"]
        test_scores = score_targets(model, x_final, z_final, split.test_targets, config.t_max)
        report = sliced_report(test_scores, split.test_targets, split)
        with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
            json.dump(report.as_dict(), fh, indent=2)
    return checkpoint


def _write_conformity_csv(path, epoch_weights: list[ConformityWeights]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("user,position,omega_alpha,omega_beta,omega_gamma,omega_final\n")
        for w in epoch_weights:
            for u, p, a, b, g, o in zip(
                w.users,
                w.positions,
                w.raw_alpha.detach(),
                w.raw_beta.detach(),
                w.raw_gamma.detach(),
                w.omega.detach(),
            ):
                fh.write(f"{int(u)},{int(p)},{float(a):.6f},{float(b):.6f},{float(g):.6f},{float(o):.6f}\n")


def evaluate_checkpoint(
    checkpoint: dict,
    split: SplitDataset,
    which: str = "test",
) -> MetricReport:
    """Recompute sliced ranking metrics for a stored model on a split."""
    model, config = model_from_checkpoint(checkpoint)
    targets = split.test_targets if which == "test" else split.valid_targets
    x_final = torch.as_tensor(checkpoint["x_final"], dtype=model.item_embedding.weight.dtype)
    z_final = torch.as_tensor(checkpoint["z_final"], dtype=model.item_embedding.weight.dtype)
    scores = score_targets(model, x_final, z_final, targets, config.t_max)
    return sliced_report(scores, targets, split)
