"""Run configuration and its flat ``key = value`` text form."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

from .core import ValidationError
from .losses import LOSS_NAMES
from .model import ACTIVATIONS
from .sampler import MINING_MODES


@dataclass
class RunConfig:
    loss: str = "lifted-smooth"
    margin_alpha: float = 1.0
    batch_size: int | None = None  # None -> 128, or 120 for triplet
    embedding_dim: int = 64
    hidden_widths: tuple[int, ...] = (128,)
    activations: tuple[str, ...] | None = None
    l2_normalize: bool = False
    learning_rate: float = 0.01
    momentum: float = 0.9
    last_layer_lr_mult: float = 1.0
    max_iterations: int = 20_000
    loss_floor: float = 0.0
    mining_mode: str = "within-batch"
    negatives_per_positive_element: int = 1
    candidate_pool_size: int = 512
    balance_negatives: bool = False
    eval_ks: tuple[int, ...] = (1, 2, 4, 8)
    split_ordering: str = "by-class-id"
    train_fraction_of_classes: float = 0.5
    data_seed: int = 0
    init_seed: int = 0
    sampler_seed: int = 0
    input_path: str = ""
    output_dir: str = ""
    log_wall_time: bool = False

    def __post_init__(self):
        self.hidden_widths = tuple(int(v) for v in self.hidden_widths)
        self.eval_ks = tuple(int(v) for v in self.eval_ks)
        if self.activations is not None:
            self.activations = tuple(self.activations)

    @property
    def effective_batch_size(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 120 if self.loss == "triplet" else 128

    def validate(self) -> "RunConfig":
        if self.loss not in LOSS_NAMES:
            raise ValidationError(f"loss must be one of {', '.join(LOSS_NAMES)}, got {self.loss!r}")
        if self.margin_alpha < 0:
            raise ValidationError("margin_alpha must be >= 0")
        m = self.effective_batch_size
        if m < 4:
            raise ValidationError("batch_size must be >= 4")
        if self.loss == "triplet" and m % 3:
            raise ValidationError(f"triplet loss needs batch_size divisible by 3, got {m}")
        if self.loss == "contrastive" and m % 2:
            raise ValidationError(f"contrastive loss needs an even batch_size, got {m}")
        if self.embedding_dim < 1 or any(w < 1 for w in self.hidden_widths):
            raise ValidationError("layer widths must be positive")
        if self.activations is not None:
            if len(self.activations) != len(self.hidden_widths):
                raise ValidationError("one activation per hidden layer is required")
            if any(a not in ACTIVATIONS for a in self.activations):
                raise ValidationError(f"activations must be among {ACTIVATIONS}")
        if not self.learning_rate > 0 or not 0 <= self.momentum < 1:
            raise ValidationError("learning_rate must be > 0 and momentum in [0, 1)")
        if self.max_iterations < 0:
            raise ValidationError("max_iterations must be >= 0")
        if self.mining_mode not in MINING_MODES:
            raise ValidationError(f"mining_mode must be one of {MINING_MODES}")
        if self.mining_mode == "pool-mined" and self.loss not in ("lifted-smooth", "lifted-nonsmooth"):
            raise ValidationError("pool-mined mode applies to the lifted losses only")
        if self.candidate_pool_size < m and self.mining_mode == "pool-mined":
            raise ValidationError("candidate_pool_size must be >= batch_size")
        if any(k < 1 for k in self.eval_ks):
            raise ValidationError("eval Ks must be positive")
        if not 0 < self.train_fraction_of_classes < 1:
            raise ValidationError("train_fraction_of_classes must lie in (0, 1)")
        return self

    # ------------------------------------------------------------------
    # serialization

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {_format(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        values = dataclasses.asdict(base) if base is not None else {}
        known = {f.name: f for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"config line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in known:
                raise ValidationError(f"config line {lineno}: unknown key {key!r}")
            values[key] = parse_value(key, value)
        return cls(**values)


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_INT_KEYS = {"batch_size", "embedding_dim", "max_iterations", "negatives_per_positive_element",
             "candidate_pool_size", "data_seed", "init_seed", "sampler_seed"}
_FLOAT_KEYS = {"margin_alpha", "learning_rate", "momentum", "last_layer_lr_mult", "loss_floor",
               "train_fraction_of_classes"}
_BOOL_KEYS = {"l2_normalize", "balance_negatives", "log_wall_time"}
_INT_LIST_KEYS = {"hidden_widths", "eval_ks"}
_STR_LIST_KEYS = {"activations"}


def parse_value(key: str, value: str):
    try:
        if value.lower() == "none" and key in {"batch_size", "activations"}:
            return None
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key in _BOOL_KEYS:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if key in _INT_LIST_KEYS:
            return tuple(int(v) for v in value.split(",") if v.strip()) if value else ()
        if key in _STR_LIST_KEYS:
            return tuple(v.strip() for v in value.split(",") if v.strip())
    except ValueError:
        raise ValidationError(f"invalid value {value!r} for {key}") from None
    return value


def config_json(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
