"""Aggregate run records into ablation comparison tables and per-config
seed statistics. Records persist as JSONL, one run per line."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

ABLATION_ROWS = ["full", "w/o T-CL", "w/o C-CL", "w/o CL", "w/o Adaptive-CL"]

ABLATION_TAGS = {
    None: "full",
    "": "full",
    "full": "full",
    "t-cl": "w/o T-CL",
    "c-cl": "w/o C-CL",
    "cl": "w/o CL",
    "adaptive-cl": "w/o Adaptive-CL",
}


@dataclass
class RunRecord:
    config_hash: str
    ablation: str  # one of ABLATION_ROWS
    seed: int
    dataset: str
    metrics: dict  # MetricReport.as_dict()
    wall_clock: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        return cls(**json.loads(line))


def append_records(records: list[RunRecord], path) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")


def read_records(path) -> list[RunRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(RunRecord.from_json(line))
    return out


def _metric(record: RunRecord, name: str, n: int):
    try:
        return record.metrics[name][str(n)]
    except KeyError:
        return None


def _dedupe(records: list[RunRecord]) -> list[RunRecord]:
    """Latest record wins for a duplicated (config, ablation, seed) key."""
    seen: dict[tuple, int] = {}
    for idx, record in enumerate(records):
        key = (record.config_hash, record.ablation, record.seed, record.dataset)
        if key in seen:
            warnings.warn(f"duplicate run record for {key}; keeping the latest")
        seen[key] = idx
    keep = sorted(seen.values())
    return [records[i] for i in keep]


def ablation_table(records: list[RunRecord]) -> dict:
    """Rows in the fixed ablation order, HR@1 and HR@5 columns per dataset.

    Returns {"datasets": [...], "rows": [{"ablation":..., dataset: {"HR@1":..,
    "HR@5":..}}...], "csv": str, "markdown": str}. Missing combinations stay
    blank and trigger a warning.
    """
    if len(records) < 2:
        raise ValueError("need at least two run records to build a comparison table")
    records = _dedupe(records)
    datasets = sorted({r.dataset for r in records})
    cells: dict[tuple[str, str], list[RunRecord]] = {}
    for record in records:
        cells.setdefault((record.ablation, record.dataset), []).append(record)
    rows = []
    for ablation in ABLATION_ROWS:
        row = {"ablation": ablation}
        for dataset in datasets:
            group = cells.get((ablation, dataset))
            if not group:
                row[dataset] = None
                continue
            hr1 = [m for m in (_metric(r, "HR", 1) for r in group) if m is not None]
            hr5 = [m for m in (_metric(r, "HR", 5) for r in group) if m is not None]
            row[dataset] = {
                "HR@1": sum(hr1) / len(hr1) if hr1 else None,
                "HR@5": sum(hr5) / len(hr5) if hr5 else None,
                "seeds": len(group),
            }
        if all(row[d] is None for d in datasets):
            warnings.warn(f"no run records for ablation row {ablation!r}")
        rows.append(row)

    def fmt(value):
        return f"{value:.4f}" if value is not None else ""

    csv_lines = ["ablation," + ",".join(f"{d}:HR@1,{d}:HR@5" for d in datasets)]
    md_lines = [
        "| Ablation | " + " | ".join(f"{d} HR@1 | {d} HR@5" for d in datasets) + " |",
        "|" + "---|" * (1 + 2 * len(datasets)),
    ]
    for row in rows:
        csv_cells = [row["ablation"]]
        md_cells = [row["ablation"]]
        for dataset in datasets:
            cell = row[dataset]
            hr1 = fmt(cell["HR@1"]) if cell else ""
            hr5 = fmt(cell["HR@5"]) if cell else ""
            csv_cells.extend([hr1, hr5])
            md_cells.extend([hr1, hr5])
        csv_lines.append(",".join(csv_cells))
        md_lines.append("| " + " | ".join(md_cells) + " |")
    return {
        "datasets": datasets,
        "rows": rows,
        "csv": "\n".join(csv_lines) + "\n",
        "markdown": "\n".join(md_lines) + "\n",
    }


def seed_aggregate(records: list[RunRecord]) -> dict:
    """Mean and unbiased std (n-1) of each metric over seeds, grouped by
    (config, ablation, dataset); std is None for a single seed."""
    groups: dict[tuple, list[RunRecord]] = {}
    for record in _dedupe(records):
        groups.setdefault((record.config_hash, record.ablation, record.dataset), []).append(record)
    out = {}
    for key, group in groups.items():
        stats = {}
        for metric_name in ("HR", "NDCG"):
            for n in (1, 5, 10):
                values = [m for m in (_metric(r, metric_name, n) for r in group) if m is not None]
                if not values:
                    continue
                mean = sum(values) / len(values)
                if len(values) > 1:
                    var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
                    std = math.sqrt(var)
                else:
                    std = None
                stats[f"{metric_name}@{n}"] = {"mean": mean, "std": std, "n": len(values)}
        out[key] = stats
    return out
