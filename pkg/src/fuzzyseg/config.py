"""Run configuration: dataclass, `key = value` config files, CLI overrides.

Precedence is defaults < config file < command-line flags.  Config files are
line oriented: blank lines and lines starting with ``#`` are skipped, every
other line must read ``key = value`` with a key naming a RunConfig field.
"""

import dataclasses
import typing

from .errors import ConfigurationError
from .losses import BLEND, CCE, DSV, FCCE, FCM_FIXED, PREDICTION, LossConfig
from .models import UNetSpec

MODEL_KINDS = ("unet", "unetpp")
LOSS_KINDS = (CCE, FCCE, DSV)
MEMBERSHIP_SOURCES = (FCM_FIXED, PREDICTION, BLEND)


@dataclasses.dataclass
class RunConfig:
    model: str = "unet"
    loss: str = CCE
    membership_source: str = PREDICTION
    entropy_weight: float = 1.0
    blend_beta: float = 0.5
    deep_supervision: bool = False
    epochs: int = 30
    batch_size: int = 2
    learning_rate: float = 1e-4
    early_stopping_patience: int = 10
    seed: int = 0
    depth: int = 3
    base_channels: int = 8
    num_classes: int = 4
    dropout_rate: float = 0.1
    split_fraction: float = 0.8
    dataset_dir: str = ""
    out_dir: str = "out"
    overfit: bool = False

    def validate(self) -> None:
        if self.model not in MODEL_KINDS:
            raise ConfigurationError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.loss not in LOSS_KINDS:
            raise ConfigurationError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.early_stopping_patience < 1:
            raise ConfigurationError(
                f"early_stopping_patience must be >= 1, got {self.early_stopping_patience}"
            )
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigurationError(
                f"split_fraction must be in (0, 1), got {self.split_fraction}"
            )
        if self.deep_supervision and self.model != "unetpp":
            raise ConfigurationError("deep_supervision requires model = unetpp")
        self.loss_config().validate()
        self.model_spec().validate()

    def loss_config(self) -> LossConfig:
        return LossConfig(
            kind=self.loss,
            membership_source=self.membership_source,
            blend_beta=self.blend_beta,
            entropy_weight=self.entropy_weight,
        )

    def model_spec(self) -> UNetSpec:
        return UNetSpec(
            depth=self.depth,
            base_channels=self.base_channels,
            in_channels=1,
            num_classes=self.num_classes,
            dropout_rate=self.dropout_rate if self.model == "unetpp" else 0.0,
        )

    def to_text(self) -> str:
        """Resolved settings in config-file syntax, one field per line."""
        lines = [f"{f.name} = {getattr(self, f.name)}"
                 for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"


_FIELD_TYPES = typing.get_type_hints(RunConfig)
_FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigurationError(f"cannot parse {key} = {raw!r} as {kind.__name__}") from None


def parse_config_file(path) -> dict:
    """Raw string values keyed by field name; unknown keys are an error."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _FIELD_NAMES:
                raise ConfigurationError(f"{path}:{lineno}: unknown setting {key!r}")
            values[key] = value
    return values


def make_run_config(config_file=None, overrides=None) -> RunConfig:
    """Defaults, then the config file, then typed CLI overrides; validated."""
    cfg = RunConfig()
    if config_file is not None:
        for key, raw in parse_config_file(config_file).items():
            setattr(cfg, key, _coerce(key, raw))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_NAMES:
            raise ConfigurationError(f"unknown setting {key!r}")
        setattr(cfg, key, value)
    cfg.validate()
    return cfg
