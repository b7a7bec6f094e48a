"""Leave-one-out ranking metrics, cold-start and item-sparsity slices, and
embedding export."""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import SplitDataset, TargetExample


class EvaluationContractError(Exception):
    pass


@dataclass
class MetricReport:
    hr: dict[int, float]
    ndcg: dict[int, float]
    user_count: int
    slices: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "HR": {str(n): v for n, v in self.hr.items()},
            "NDCG": {str(n): v for n, v in self.ndcg.items()},
            "user_count": self.user_count,
        }
        if self.slices:
            out["slices"] = self.slices
        return out


def target_ranks(scores: np.ndarray, targets: np.ndarray, pad_col: int | None = None) -> np.ndarray:
    """1-based rank of each row's target column under descending score with
    ties broken by ascending column index."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    users, cols = scores.shape
    if np.any(targets < 0) or np.any(targets >= cols):
        raise EvaluationContractError("target outside the scored catalog")
    if pad_col is not None and np.any(targets == pad_col):
        raise EvaluationContractError("pad column appeared as a target")
    col_idx = np.arange(cols)
    valid = np.ones(cols, dtype=bool)
    if pad_col is not None:
        valid[pad_col] = False
    target_scores = scores[np.arange(users), targets]
    higher = ((scores > target_scores[:, None]) & valid[None, :]).sum(axis=1)
    tied_lower = (
        (scores == target_scores[:, None]) & (col_idx[None, :] < targets[:, None]) & valid[None, :]
    ).sum(axis=1)
    return 1 + higher + tied_lower


def rank_metrics(
    scores: np.ndarray,
    targets: np.ndarray,
    ns: tuple[int, ...] = (1, 5, 10),
    pad_col: int | None = None,
) -> MetricReport:
    """Hit ratio and NDCG at each cutoff from full-catalog scores.

    HR@N is the fraction of rows whose target rank is <= N; NDCG@N credits
    1/log2(rank + 1) inside the cutoff and 0 outside.
    """
    ranks = target_ranks(scores, targets, pad_col)
    hr = {}
    ndcg = {}
    for n in ns:
        hit = ranks <= n
        hr[n] = float(hit.mean()) if len(ranks) else 0.0
        gains = np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0)
        ndcg[n] = float(gains.mean()) if len(ranks) else 0.0
    return MetricReport(hr=hr, ndcg=ndcg, user_count=len(ranks))


def metrics_for_subset(scores, targets, indices, ns=(1, 5, 10), pad_col=None) -> MetricReport:
    if len(indices) == 0:
        return MetricReport(hr={n: 0.0 for n in ns}, ndcg={n: 0.0 for n in ns}, user_count=0)
    idx = np.asarray(indices, dtype=np.int64)
    return rank_metrics(scores[idx], np.asarray(targets)[idx], ns, pad_col)


def cold_start_slice(split: SplitDataset, threshold: int = 20) -> list[int]:
    """Users whose total (pre-truncation) interaction count is below the
    threshold."""
    return [s.user_id for s in split.train_sequences if s.source_length < threshold]


def train_item_counts(split: SplitDataset) -> Counter:
    counts: Counter = Counter()
    for seq in split.train_sequences:
        counts.update(seq.items)
    return counts


def sparsity_groups(
    split: SplitDataset,
    targets: list[TargetExample],
    groups: int = 5,
) -> list[dict]:
    """Partition the distinct target items into equal-count groups by their
    training-interaction counts (group 1 = least interacted), and assign
    each evaluation row to its target's group.

    Returns one dict per group with keys: group (1-based), items, indices
    (row positions in `targets`), users, mean_popularity.
    """
    counts = train_item_counts(split)
    distinct = sorted({t.target for t in targets}, key=lambda it: (counts.get(it, 0), it))
    if len(distinct) < groups:
        warnings.warn(
            f"only {len(distinct)} distinct target items; emitting {len(distinct)} groups instead of {groups}"
        )
        groups = len(distinct)
    chunks = np.array_split(np.asarray(distinct, dtype=np.int64), groups)
    out = []
    for gi, chunk in enumerate(chunks, start=1):
        members = set(int(i) for i in chunk)
        indices = [row for row, t in enumerate(targets) if t.target in members]
        out.append(
            {
                "group": gi,
                "items": sorted(members),
                "indices": indices,
                "users": [targets[row].user_id for row in indices],
                "mean_popularity": float(np.mean([counts.get(i, 0) for i in members])) if members else 0.0,
            }
        )
    return out


def sliced_report(
    scores: np.ndarray,
    targets: list[TargetExample],
    split: SplitDataset,
    ns: tuple[int, ...] = (1, 5, 10),
    pad_col: int | None = 0,
    cold_threshold: int = 20,
    popularity_groups: int = 5,
) -> MetricReport:
    """Overall metrics plus cold-start and popularity-quintile breakdowns."""
    target_ids = np.asarray([t.target for t in targets], dtype=np.int64)
    report = rank_metrics(scores, target_ids, ns, pad_col)
    cold_users = set(cold_start_slice(split, cold_threshold))
    cold_idx = [i for i, t in enumerate(targets) if t.user_id in cold_users]
    cold = metrics_for_subset(scores, target_ids, cold_idx, ns, pad_col)
    report.slices["cold_start"] = {**cold.as_dict(), "threshold": cold_threshold}
    group_reports = []
    for group in sparsity_groups(split, targets, popularity_groups):
        gm = metrics_for_subset(scores, target_ids, group["indices"], ns, pad_col)
        group_reports.append(
            {
                "group": group["group"],
                "mean_popularity": group["mean_popularity"],
                **gm.as_dict(),
            }
        )
    report.slices["popularity_groups"] = group_reports
    return report


EXPORT_VIEWS = ("h_table", "x", "z", "fused")


def export_embeddings(checkpoint: dict, view: str, path) -> None:
    """Write one |V| x d embedding view as TSV with a leading item-id column.

    Views: h_table (the shared base item table), x (transition-graph
    propagated), z (co-interaction propagated), fused (attentive fusion of
    the three, recomputed per item). Rows follow internal item order, ids
    are the original tokens, floats use a fixed %.8e format, so exports are
    byte-stable.
    """
    if view not in EXPORT_VIEWS:
        raise ValueError(f"unknown view {view!r}; expected one of {EXPORT_VIEWS}")
    base = torch.as_tensor(checkpoint["item_table"], dtype=torch.float64)
    x = torch.as_tensor(checkpoint["x_final"], dtype=torch.float64)
    z = torch.as_tensor(checkpoint["z_final"], dtype=torch.float64)
    if view == "h_table":
        matrix = base
    elif view == "x":
        matrix = x
    elif view == "z":
        matrix = z
    else:
        vector = torch.as_tensor(checkpoint["fusion_vector"], dtype=torch.float64)
        weight = torch.as_tensor(checkpoint["fusion_matrix"], dtype=torch.float64)
        views = torch.stack([base, x, z], dim=1)  # (V+1, 3, d)
        scores = (views @ weight.T * vector).sum(dim=-1)
        att = torch.softmax(scores, dim=-1)
        matrix = (att.unsqueeze(-1) * views).sum(dim=1)
    tokens = checkpoint.get("index_to_item")
    rows = matrix[1:]  # drop the pad row
    with open(path, "w", encoding="utf-8") as fh:
        for internal in range(1, matrix.shape[0]):
            token = tokens[internal - 1] if tokens else str(internal)
            values = "\t".join(f"{float(v):.8e}" for v in rows[internal - 1])
            fh.write(f"{token}\t{values}\n")
