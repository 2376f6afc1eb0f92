"""Configuration dataclasses and the JSON run configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .datagen.examples import OBJECTIVES
from .datagen.synthetic import CorpusParams

SCOPES = ("pred", "pred+trm", "pred+trm+emb")
DTYPES = ("float32", "float64")


class ConfigError(ValueError):
    """A configuration value or key is invalid."""


@dataclass
class ModelConfig:
    vocab_size: int = 1000
    emb_dim: int = 768
    n_layers: int = 3
    head_dim: int = 64
    ffn_dim: int = 3072
    max_seq_len: int = 128
    dropout: float = 0.1
    type_vocab: int = 2
    init_std: float = 0.02
    tie_mlm: bool = False
    dtype: str = "float32"
    ln_eps: float = 1e-12

    @property
    def n_heads(self) -> int:
        return self.emb_dim // self.head_dim

    def validate(self) -> None:
        for name in ("vocab_size", "emb_dim", "n_layers", "head_dim", "ffn_dim", "max_seq_len", "type_vocab"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"model.{name} must be positive, got {getattr(self, name)}")
        if self.emb_dim % self.head_dim:
            raise ConfigError(f"emb_dim {self.emb_dim} is not a multiple of head_dim {self.head_dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.init_std <= 0:
            raise ConfigError("init_std must be positive")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {DTYPES}, got {self.dtype!r}")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    dropout: float = 0.1
    max_steps: int = 1000
    epochs: int = 30
    seed: int = 0
    scope: str = "pred+trm+emb"
    multitask_finetune: bool = False
    objectives: list[str] = field(default_factory=lambda: list(OBJECTIVES))
    reset_head: bool = False
    log_every: int = 1

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ConfigError("adam hyperparameters out of range")
        if self.max_steps < 0 or self.epochs < 0:
            raise ConfigError("max_steps and epochs must be non-negative")
        if self.scope not in SCOPES:
            raise ConfigError(f"unknown scope {self.scope!r}; expected one of {SCOPES}")
        unknown = set(self.objectives) - set(OBJECTIVES)
        if unknown:
            raise ConfigError(f"unknown objectives {sorted(unknown)}")
        if not self.objectives:
            raise ConfigError("empty objective set")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")


@dataclass
class TokenizerConfig:
    vocab_size: int = 1000
    max_piece_len: int = 8
    min_count: int = 2
    alpha: float = 0.2

    def validate(self) -> None:
        if self.vocab_size <= 0 or self.max_piece_len <= 0 or self.min_count <= 0:
            raise ConfigError("tokenizer sizes must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in (0, 1], got {self.alpha}")


@dataclass
class ExperimentConfig:
    corpus: CorpusParams = field(default_factory=CorpusParams)
    n_pool: int = 275
    n_test: int = 200
    n_ad_snippets: int = 600
    task: str = "ct"
    arms: list[list[str]] = field(default_factory=lambda: [list(OBJECTIVES), ["MLM", "NSP"]])
    sizes: list[int] = field(default_factory=lambda: [25, 50, 100, 200])
    k_folds: int = 5
    seeds: list[int] = field(default_factory=lambda: [0, 1])
    mask_rate: float = 0.15
    mask_exponent: float = -0.5

    def validate(self) -> None:
        self.corpus.validate()
        if self.task not in ("ct", "ad"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.k_folds < 2:
            raise ConfigError("k_folds must be >= 2")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if any(s <= 0 for s in self.sizes):
            raise ConfigError("finetune sizes must be positive")
        for arm in self.arms:
            if not arm or set(arm) - set(OBJECTIVES):
                raise ConfigError(f"bad arm {arm}")
        if not 0.0 < self.mask_rate < 1.0:
            raise ConfigError("mask_rate must be in (0, 1)")


def _pretrain_default() -> TrainConfig:
    return TrainConfig(batch_size=256, max_steps=1000)


def _finetune_default() -> TrainConfig:
    return TrainConfig(batch_size=64, scope="pred", epochs=30)


@dataclass
class RunConfig:
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: TrainConfig = field(default_factory=_pretrain_default)
    finetune: TrainConfig = field(default_factory=_finetune_default)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    master_seed: int = 0

    def validate(self) -> None:
        self.tokenizer.validate()
        self.model.validate()
        self.pretrain.validate()
        self.finetune.validate()
        self.experiment.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = _build(cls, data, "")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)


_NESTED = {
    (RunConfig, "tokenizer"): TokenizerConfig,
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "pretrain"): TrainConfig,
    (RunConfig, "finetune"): TrainConfig,
    (RunConfig, "experiment"): ExperimentConfig,
    (ExperimentConfig, "corpus"): CorpusParams,
}


def _build(cls, data: dict, where: str, base=None):
    """Overlay ``data`` on ``base`` (default: a fresh ``cls()``), rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    prefix = where + "." if where else ""
    unknown = sorted(set(data) - {f.name for f in fields(cls)})
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(prefix + k for k in unknown)}")
    obj = base if base is not None else cls()
    for key, value in data.items():
        sub = _NESTED.get((cls, key))
        if sub is not None:
            value = _build(sub, value, prefix + key, getattr(obj, key))
        setattr(obj, key, value)
    return obj


def desk_config(pretrain_steps: int = 1500) -> RunConfig:
    """Laptop-scale settings for the objective-alignment comparison."""
    cfg = RunConfig(
        tokenizer=TokenizerConfig(vocab_size=500),
        model=ModelConfig(vocab_size=500, emb_dim=64, n_layers=2, head_dim=32, ffn_dim=256, max_seq_len=64),
        pretrain=TrainConfig(lr=1e-3, batch_size=32, max_steps=pretrain_steps),
        finetune=TrainConfig(lr=1e-3, batch_size=8, epochs=40, scope="pred+trm"),
        experiment=ExperimentConfig(corpus=CorpusParams(n_docs=2000, entity_lexicon_size=2000, doc_len=100)),
    )
    cfg.validate()
    return cfg
