"""Interaction ingestion, padded sequence building, leave-one-out splits,
and a synthetic popularity-biased corpus generator.

Id spaces: `ingest` produces densely re-indexed ids starting at 0 (the
"raw dense" space). Everything downstream of `shift_to_internal` works in
the internal space where id 0 is the reserved padding token and real items
occupy 1..catalog_size.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

PAD_TOKEN = 0


class DataError(Exception):
    """Base class for dataset construction failures."""


class ParseError(DataError):
    def __init__(self, path, line_number, message):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


class EmptyDatasetError(DataError):
    pass


@dataclass(frozen=True)
class Interaction:
    user_id: int
    item_id: int
    timestamp: int


@dataclass
class IdMaps:
    """Token <-> dense-index maps persisted next to every trained artifact."""

    user_to_index: dict[str, int]
    item_to_index: dict[str, int]

    @property
    def index_to_user(self) -> list[str]:
        out = [""] * len(self.user_to_index)
        for tok, idx in self.user_to_index.items():
            out[idx] = tok
        return out

    @property
    def index_to_item(self) -> list[str]:
        out = [""] * len(self.item_to_index)
        for tok, idx in self.item_to_index.items():
            out[idx] = tok
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"users": self.user_to_index, "items": self.item_to_index}, fh)

    @classmethod
    def load(cls, path) -> "IdMaps":
        with open(path, encoding="utf-8") as fh:
            blob = json.load(fh)
        return cls(user_to_index=blob["users"], item_to_index=blob["items"])


@dataclass
class UserSequence:
    """One user's temporally ordered items plus padding metadata.

    `items` holds internal ids (never the pad token), already truncated to
    the most recent `t_max` entries. `padded` is left-aligned: items occupy
    positions 0..true_length-1 and pad tokens follow. `source_length` is
    the interaction count before truncation (used for cold-start slicing).
    """

    user_id: int
    items: list[int]
    padded: list[int]
    true_length: int
    source_length: int


@dataclass
class TargetExample:
    user_id: int
    history: list[int]
    target: int


@dataclass
class SplitDataset:
    train_sequences: list[UserSequence]
    valid_targets: list[TargetExample]
    test_targets: list[TargetExample]
    catalog_size: int
    user_count: int
    drop_report: dict = field(default_factory=dict)

    def source_lengths(self) -> dict[int, int]:
        return {s.user_id: s.source_length for s in self.train_sequences}


@dataclass
class SyntheticSpec:
    user_count: int
    item_count: int
    mean_length: int
    conformity_fraction: float
    popularity_exponent: float
    seed: int
    cluster_size: int = 10

    def validate(self) -> None:
        if min(self.user_count, self.item_count, self.mean_length) <= 0:
            raise ValueError("user_count, item_count and mean_length must be positive")
        if not 0.0 <= self.conformity_fraction <= 1.0:
            raise ValueError("conformity_fraction must lie in [0, 1]")
        if self.popularity_exponent <= 0:
            raise ValueError("popularity_exponent must be positive")
        if self.cluster_size <= 0:
            raise ValueError("cluster_size must be positive")


INTEREST_LABEL = "interest"
CONFORMITY_LABEL = "conformity"


def _token_sort_key(token: str):
    try:
        return (0, int(token), token)
    except ValueError:
        return (1, 0, token)


def parse_tsv_rows(path) -> list[tuple[str, str, int]]:
    """Raw `(user, item, timestamp)` token rows, validated but not re-indexed."""
    rows: list[tuple[str, str, int]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(path, lineno, f"expected 3 tab-separated fields, got {len(parts)}")
            user_tok, item_tok, ts_tok = parts
            try:
                ts = int(ts_tok)
            except ValueError:
                raise ParseError(path, lineno, f"timestamp {ts_tok!r} is not an integer") from None
            rows.append((user_tok, item_tok, ts))
    if not rows:
        raise EmptyDatasetError(f"{path} contains no interactions")
    return rows


def ingest(path, format: str = "tsv", id_maps: IdMaps | None = None) -> tuple[list[Interaction], IdMaps]:
    """Parse `user \\t item \\t timestamp` rows and densely re-index ids from 0.

    Re-indexing is deterministic: tokens are sorted (numerically when they
    parse as integers, lexicographically otherwise), so re-ingesting an
    emitted dataset is a fixed point. Pass `id_maps` to reuse the maps of a
    trained model; unknown tokens then raise ParseError.
    """
    if format != "tsv":
        raise ValueError(f"unsupported format: {format!r}")
    rows = parse_tsv_rows(path)

    if id_maps is None:
        user_tokens = sorted({r[0] for r in rows}, key=_token_sort_key)
        item_tokens = sorted({r[1] for r in rows}, key=_token_sort_key)
        id_maps = IdMaps(
            user_to_index={tok: i for i, tok in enumerate(user_tokens)},
            item_to_index={tok: i for i, tok in enumerate(item_tokens)},
        )
    interactions = []
    for lineno, (user_tok, item_tok, ts) in enumerate(rows, start=1):
        try:
            uid = id_maps.user_to_index[user_tok]
            iid = id_maps.item_to_index[item_tok]
        except KeyError as exc:
            raise ParseError(path, lineno, f"token {exc.args[0]!r} not present in provided id maps") from None
        interactions.append(Interaction(uid, iid, ts))
    return interactions, id_maps


def write_tsv(interactions: list[Interaction], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for it in interactions:
            fh.write(f"{it.user_id}\t{it.item_id}\t{it.timestamp}\n")


def shift_to_internal(interactions: list[Interaction]) -> list[Interaction]:
    """Shift 0-based dense item ids by +1 so id 0 is free for the pad token."""
    return [Interaction(it.user_id, it.item_id + 1, it.timestamp) for it in interactions]


def build_sequences(interactions: list[Interaction], t_max: int) -> list[UserSequence]:
    """Group per user, order by (timestamp, item id), truncate and pad.

    Truncation keeps the most recent `t_max` items. Equal timestamps are
    broken by ascending item id so splits are deterministic. Item ids must
    already be internal (>= 1).
    """
    if t_max < 2:
        raise ValueError("t_max must be at least 2")
    per_user: dict[int, list[Interaction]] = defaultdict(list)
    for it in interactions:
        if it.item_id < 1:
            raise ValueError("build_sequences expects internal item ids (>= 1); apply shift_to_internal first")
        per_user[it.user_id].append(it)
    sequences = []
    for uid in sorted(per_user):
        ordered = sorted(per_user[uid], key=lambda it: (it.timestamp, it.item_id))
        items = [it.item_id for it in ordered]
        source_length = len(items)
        items = items[-t_max:]
        padded = items + [PAD_TOKEN] * (t_max - len(items))
        sequences.append(
            UserSequence(
                user_id=uid,
                items=items,
                padded=padded,
                true_length=len(items),
                source_length=source_length,
            )
        )
    return sequences


def _pad(items: list[int], t_max: int) -> list[int]:
    return items + [PAD_TOKEN] * (t_max - len(items))


def leave_one_out(sequences: list[UserSequence], min_length: int = 3) -> SplitDataset:
    """Hold out each user's last item for test and the penultimate for validation.

    Training history is everything before those two. Users shorter than
    `min_length` are dropped and recorded in the drop report.
    """
    t_max = len(sequences[0].padded) if sequences else 0
    dropped = []
    train_sequences = []
    valid_targets = []
    test_targets = []
    max_item = 0
    for seq in sequences:
        if seq.true_length < min_length:
            dropped.append(seq.user_id)
            continue
        items = seq.items
        max_item = max(max_item, max(items))
        history = items[:-2]
        train_sequences.append(
            UserSequence(
                user_id=seq.user_id,
                items=list(history),
                padded=_pad(list(history), t_max),
                true_length=len(history),
                source_length=seq.source_length,
            )
        )
        valid_targets.append(TargetExample(seq.user_id, list(items[:-2]), items[-2]))
        test_targets.append(TargetExample(seq.user_id, list(items[:-1]), items[-1]))
    report = {
        "dropped_users": dropped,
        "reasons": {str(uid): f"fewer than {min_length} interactions" for uid in dropped},
    }
    return SplitDataset(
        train_sequences=train_sequences,
        valid_targets=valid_targets,
        test_targets=test_targets,
        catalog_size=max_item,
        user_count=len(train_sequences),
        drop_report=report,
    )


def prepare_dataset(interactions: list[Interaction], t_max: int, min_length: int = 3) -> SplitDataset:
    """Full pipeline from raw dense interactions to a leave-one-out split."""
    internal = shift_to_internal(interactions)
    sequences = build_sequences(internal, t_max)
    return leave_one_out(sequences, min_length=min_length)


def zipf_probabilities(item_count: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, item_count + 1, dtype=np.float64)
    weights = ranks ** (-exponent)
    return weights / weights.sum()


def synthesize(spec: SyntheticSpec) -> tuple[list[Interaction], list[str]]:
    """Generate a popularity-biased corpus with per-interaction ground truth.

    Each step is popularity-driven with probability `conformity_fraction`
    (item drawn from a Zipf distribution over the whole catalog) and
    interest-driven otherwise (drawn uniformly from the user's own small
    item cluster). Labels are returned parallel to the interactions.
    Sequence lengths are 3 + Poisson(mean_length - 3) so every user
    survives the leave-one-out minimum. Fully reproducible given the seed.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    popular = zipf_probabilities(spec.item_count, spec.popularity_exponent)
    cluster_count = max(1, spec.item_count // spec.cluster_size)
    interactions: list[Interaction] = []
    labels: list[str] = []
    extra = max(0, spec.mean_length - 3)
    for uid in range(spec.user_count):
        length = 3 + (rng.poisson(extra) if extra else 0)
        cluster = int(rng.integers(cluster_count))
        lo = cluster * spec.cluster_size
        hi = min(spec.item_count, lo + spec.cluster_size)
        for step in range(length):
            if rng.random() < spec.conformity_fraction:
                item = int(rng.choice(spec.item_count, p=popular))
                labels.append(CONFORMITY_LABEL)
            else:
                item = int(rng.integers(lo, hi))
                labels.append(INTEREST_LABEL)
            interactions.append(Interaction(uid, item, step))
    return interactions, labels


def write_labels(labels: list[str], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(lab + "\n")


def write_drop_report(split: SplitDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(split.drop_report, fh, indent=2)
