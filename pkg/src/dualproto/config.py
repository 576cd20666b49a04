"""Training configuration: defaults, key=value file parsing, flag overrides."""

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError, DataFormatError

BRANCH_SEMANTIC = "sp"
BRANCH_VISUAL = "vp"

# config-file / checkpoint-echo key per field
_KEYS = {
    "manifest": "manifest",
    "lr": "lr",
    "batch_size": "batch_size",
    "epochs": "epochs",
    "node_mix": "lambda",
    "fusion_init": "gamma",
    "temperature": "tau",
    "prefix_len": "prefix_len",
    "token_dim": "token_dim",
    "hidden_dim": "hidden_dim",
    "embed_dim": "d",
    "seed": "seed",
    "decay_factor": "decay_factor",
    "decay_period": "decay_period",
    "branches": "branches",
}
_FIELD_OF_KEY = {v: k for k, v in _KEYS.items()}


@dataclass
class TrainConfig:
    """Desk-scale defaults; every field can come from a key=value file or a flag."""

    manifest: str = None
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 15
    node_mix: float = 0.9
    fusion_init: float = 0.3
    temperature: float = 0.01
    prefix_len: int = 3
    token_dim: int = None
    hidden_dim: int = None
    embed_dim: int = None
    seed: int = 0
    decay_factor: float = 0.5
    decay_period: int = 5
    branches: tuple = (BRANCH_SEMANTIC, BRANCH_VISUAL)

    def validate(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.node_mix <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.node_mix}")
        if not 0.0 <= self.fusion_init <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.fusion_init}")
        if self.temperature <= 0:
            raise ConfigError(f"tau must be positive, got {self.temperature}")
        if self.prefix_len < 1:
            raise ConfigError(f"prefix_len must be >= 1, got {self.prefix_len}")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ConfigError(f"decay_factor must lie in (0, 1], got {self.decay_factor}")
        if self.decay_period < 1:
            raise ConfigError(f"decay_period must be >= 1, got {self.decay_period}")
        branches = tuple(self.branches)
        if not branches or any(b not in (BRANCH_SEMANTIC, BRANCH_VISUAL) for b in branches):
            raise ConfigError(f"branches must be a non-empty subset of (sp, vp), got {branches}")
        for name in ("token_dim", "hidden_dim", "embed_dim"):
            value = getattr(self, name)
            if value is not None and int(value) < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        return self

    def learning_rate_at(self, epoch):
        """lr schedule: base * decay_factor ** floor(epoch / decay_period)."""
        return self.lr * self.decay_factor ** (epoch // self.decay_period)

    def to_lines(self):
        """Canonical key=value echo (sorted keys, round-trip float repr)."""
        lines = []
        for key in sorted(_FIELD_OF_KEY):
            value = getattr(self, _FIELD_OF_KEY[key])
            if value is None:
                continue
            if key == "branches":
                value = ",".join(value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_lines(cls, text, base=None):
        cfg = base if base is not None else cls()
        updates = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"bad config line {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _FIELD_OF_KEY:
                raise ConfigError(f"unknown config key {key!r}")
            updates[_FIELD_OF_KEY[key]] = _parse_value(key, value)
        return replace(cfg, **updates).validate()

    @classmethod
    def from_file(cls, path, base=None):
        path = Path(path)
        if not path.is_file():
            raise DataFormatError(f"config file not found: {path}", kind="missing-file")
        return cls.from_lines(path.read_text(encoding="utf-8"), base=base)

    def override(self, **kwargs):
        updates = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **updates).validate()


_INT_FIELDS = {"batch_size", "epochs", "prefix_len", "token_dim", "hidden_dim", "embed_dim",
               "seed", "decay_period"}
_FLOAT_FIELDS = {"lr", "node_mix", "fusion_init", "temperature", "decay_factor"}


def _parse_value(key, value):
    field = _FIELD_OF_KEY[key]
    try:
        if field == "branches":
            return tuple(part.strip() for part in value.split(",") if part.strip())
        if field == "manifest":
            return value
        if field in _INT_FIELDS:
            return int(value)
        if field in _FLOAT_FIELDS:
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {value!r}") from None
    raise ConfigError(f"unknown config key {key!r}")


def config_field_names():
    return tuple(f.name for f in fields(TrainConfig))
