"""Training configuration with defaults and the documented search grids."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields


class ConfigError(Exception):
    pass


SEARCH_RANGES = {
    "mu_c": [0.3, 0.4, 0.5, 0.6, 0.7],
    "lambda1": [5e-4, 1e-3, 5e-3, 1e-2],
    "lambda2": [1e-3, 1e-2, 1e-1, 1.0],
    "k": [2, 4, 6, 8, 10],
}

ABLATIONS = ("t-cl", "c-cl", "cl", "adaptive-cl")


@dataclass
class TrainConfig:
    embed_dim: int = 64
    transformer_layers: int = 2
    gnn_layers: int = 2
    heads: int = 2
    ffn_hidden: int = 256
    t_max: int = 50
    k: int = 4
    mu_c: float = 0.5
    sigma: float = 0.1
    tau: float = 1.0
    lambda1: float = 1e-3
    lambda2: float = 1e-2
    negatives: str = "full_catalog"
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0
    dropout: float = 0.2
    min_seq_len: int = 3
    detach_conformity: bool = False
    separate_graph_tables: bool = False
    ablate: str | None = None
    memory_limit_gb: float = 8.0

    def validate(self) -> None:
        if self.embed_dim % self.heads != 0:
            raise ConfigError("embed_dim must be divisible by heads")
        if not 0.0 < self.mu_c < 1.0:
            raise ConfigError("mu_c must lie in (0, 1)")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be nonnegative")
        if self.negatives not in ("full_catalog", "in_batch"):
            raise ConfigError(f"unknown negatives mode {self.negatives!r}")
        if self.ablate is not None and self.ablate not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablate!r}; expected one of {ABLATIONS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.t_max < 2:
            raise ConfigError("t_max must be at least 2")
        for name in ("transformer_layers", "gnn_layers", "k", "batch_size", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.patience < 0:
            raise ConfigError("patience must be nonnegative")

    def canonical_dict(self) -> dict:
        return {k: v for k, v in sorted(asdict(self).items())}

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def _parse_value(raw: str):
    text = raw.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text.strip("\"'")


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines; `#` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = stripped.split("=", 1)
        values[key.strip()] = _parse_value(raw)
    return values


def load_config(path, overrides: dict | None = None) -> TrainConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            values = parse_config_text(fh.read())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    config = TrainConfig(**values)
    config.validate()
    return config
