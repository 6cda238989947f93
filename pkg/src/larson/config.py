"""Run configuration: flat ``key = value`` files with typed defaults."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    """Raised for unknown keys, bad values, or inconsistent settings."""


@dataclass
class ModelConfig:
    relations: tuple[str, ...] = ()
    seed: int = 13

    encoder_kind: str = "mock"
    encoder_dim: int = 64
    encoder_attention_layer: int = -1
    encoder_max_len: int = 1024
    tokenizer_piece_len: int = 4

    gat_layers: int = 3
    gat_heads: int = 1
    gat_dim: int = 256
    gat_leaky_slope: float = 0.2
    dep_bidirectional: bool = False

    tree_dim: int = 256

    fusion_dim: int = 256
    fusion_dropout: float = 0.5
    sentence_combine_mode: str = "attention"
    context_entity_rows: str = "markers"
    head_block_size: int = 0

    ablate_dependency: bool = False
    ablate_constituency: bool = False
    ablate_dynamic_fusion: bool = False

    evidence_weight: float = 0.1

    lr_encoder: float = 3e-5
    lr_rest: float = 2e-4
    weight_decay: float = 0.01
    warmup_ratio: float = 0.06
    epochs: int = 30
    batch_size: int = 4
    max_steps: int = 0
    eval_every: int = 0

    def validate(self) -> "ModelConfig":
        if self.encoder_kind not in ("mock", "external"):
            raise ConfigError(f"encoder.kind must be mock or external, got {self.encoder_kind!r}")
        if self.gat_heads != 1:
            raise ConfigError("gat.heads must be 1 (multi-head aggregation is not supported)")
        if self.encoder_attention_layer not in (-1, 1):
            raise ConfigError("encoder.attention_layer must be -1 (last) or 1 for the mock encoder")
        for name in ("encoder_dim", "gat_dim", "tree_dim", "fusion_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{KEY_OF[name]} must be positive")
        if self.gat_layers < 1:
            raise ConfigError("gat.layers must be >= 1")
        if not 0.0 <= self.fusion_dropout < 1.0:
            raise ConfigError("fusion.dropout must be in [0, 1)")
        if self.sentence_combine_mode not in ("attention", "paired"):
            raise ConfigError("sentence_combine.mode must be attention or paired")
        if self.context_entity_rows not in ("markers", "mention_tokens"):
            raise ConfigError("context.entity_rows must be markers or mention_tokens")
        if self.head_block_size:
            if self.head_block_size < 0 or self.encoder_dim % self.head_block_size:
                raise ConfigError("head.block_size must divide encoder.dim")
        if self.evidence_weight < 0:
            raise ConfigError("loss.evidence_weight must be >= 0")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ConfigError("optim.warmup_ratio must be in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("optim.batch_size must be >= 1")
        if self.tokenizer_piece_len < 1:
            raise ConfigError("tokenizer.piece_len must be >= 1")
        if self.encoder_max_len < 1:
            raise ConfigError("encoder.max_len must be >= 1")
        return self

    def to_items(self) -> dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if f.name == "relations":
                out[KEY_OF[f.name]] = ",".join(val)
            elif isinstance(val, bool):
                out[KEY_OF[f.name]] = "true" if val else "false"
            else:
                out[KEY_OF[f.name]] = repr(val) if isinstance(val, float) else str(val)
        return out

    def to_text(self) -> str:
        items = self.to_items()
        return "".join(f"{k} = {items[k]}\n" for k in sorted(items))

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]


# config-file key <-> dataclass field
KEY_MAP = {
    "relations": "relations",
    "seed": "seed",
    "encoder.kind": "encoder_kind",
    "encoder.dim": "encoder_dim",
    "encoder.attention_layer": "encoder_attention_layer",
    "encoder.max_len": "encoder_max_len",
    "tokenizer.piece_len": "tokenizer_piece_len",
    "gat.layers": "gat_layers",
    "gat.heads": "gat_heads",
    "gat.dim": "gat_dim",
    "gat.leaky_slope": "gat_leaky_slope",
    "dep_bidirectional": "dep_bidirectional",
    "tree.dim": "tree_dim",
    "fusion.dim": "fusion_dim",
    "fusion.dropout": "fusion_dropout",
    "sentence_combine.mode": "sentence_combine_mode",
    "context.entity_rows": "context_entity_rows",
    "head.block_size": "head_block_size",
    "ablate.dependency": "ablate_dependency",
    "ablate.constituency": "ablate_constituency",
    "ablate.dynamic_fusion": "ablate_dynamic_fusion",
    "loss.evidence_weight": "evidence_weight",
    "optim.lr_encoder": "lr_encoder",
    "optim.lr_rest": "lr_rest",
    "optim.weight_decay": "weight_decay",
    "optim.warmup_ratio": "warmup_ratio",
    "optim.epochs": "epochs",
    "optim.batch_size": "batch_size",
    "optim.max_steps": "max_steps",
    "optim.eval_every": "eval_every",
}
KEY_OF = {field: key for key, field in KEY_MAP.items()}

_BOOLS = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def _coerce(field: str, raw: str):
    if field == "relations":
        return tuple(s.strip() for s in raw.split(",") if s.strip())
    kind = ModelConfig.__dataclass_fields__[field].type
    if kind == "bool":
        try:
            return _BOOLS[raw.strip().lower()]
        except KeyError:
            raise ConfigError(f"{KEY_OF[field]}: expected a boolean, got {raw!r}") from None
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{KEY_OF[field]}: could not parse {raw!r} as {kind}") from None
    return raw.strip()


def config_from_items(items: dict[str, str]) -> ModelConfig:
    values = {}
    for key, raw in items.items():
        field = KEY_MAP.get(key)
        if field is None:
            raise ConfigError(f"unknown config key {key!r}")
        values[field] = _coerce(field, raw)
    return ModelConfig(**values).validate()


def load_config(path) -> ModelConfig:
    items: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key in items:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        items[key] = raw.strip()
    return config_from_items(items)
