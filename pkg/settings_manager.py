import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import List, Optional

from dotenv import load_dotenv

from errors import ConfigurationError, DataError
from feature_io import atomic_write_json

logger = logging.getLogger(__name__)

ENV_OVERRIDES = {
    "SVDKL_SEED": "seed",
    "SVDKL_WORKERS": "workers",
}


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    step_size: float = 1e-2
    net_step_size: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    inducing_count: int = 200
    layer_sizes: List[int] = field(default_factory=lambda: [24, 1000, 500, 50, 20])
    pretrain_epochs: int = 50
    pretrain_step_size: float = 1e-3
    jitter_base: float = 1e-6
    seed: int = 0
    shared_inducing: bool = False
    use_net: bool = True
    warm_start_heads: bool = False
    workers: int = 1
    eval_every: int = 0
    alpha: float = 0.41
    baseline_epochs: int = 200
    baseline_patience: int = 5
    validation_fraction: float = 0.2

    def validate(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.step_size <= 0 or self.net_step_size <= 0:
            raise ConfigurationError("step sizes must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1), got {value}")
        if self.inducing_count < 1:
            raise ConfigurationError(f"inducing_count must be >= 1, got {self.inducing_count}")
        if self.use_net and (len(self.layer_sizes) < 3 or any(int(s) < 1 for s in self.layer_sizes)):
            raise ConfigurationError(
                f"layer_sizes needs input, >= 1 hidden and output sizes, got {self.layer_sizes}")
        if self.pretrain_epochs < 0:
            raise ConfigurationError("pretrain_epochs must be >= 0")
        if self.jitter_base <= 0:
            raise ConfigurationError("jitter_base must be positive")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if not -1.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in (-1, 1), got {self.alpha}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigurationError("validation_fraction must lie in (0, 1)")
        if self.baseline_patience < 0 or self.baseline_epochs < 1:
            raise ConfigurationError("baseline_patience must be >= 0 and baseline_epochs >= 1")
        return self

    def to_dict(self):
        return asdict(self)


_DEFAULTS = TrainConfig()


def _as_int(value):
    if isinstance(value, float) and not value.is_integer():
        raise ValueError("not an integer")
    return int(value)


def _coerce(name, value):
    default = getattr(_DEFAULTS, name)
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                return value.strip().lower() in ("1", "true", "yes", "on")
            return bool(value)
        if isinstance(default, int):
            return _as_int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if isinstance(value, str):
                value = [part for part in value.replace(",", " ").split() if part]
            return [_as_int(v) for v in value]
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"invalid value for '{name}': {value!r} ({e})")
    return value


class SettingsManager:
    """Builds a TrainConfig from defaults, a JSON file, the environment and explicit overrides."""

    def __init__(self, file_path=None, use_env=True):
        self.file_path = file_path
        self.settings = TrainConfig().to_dict()
        if file_path is not None:
            self.load()
        if use_env:
            self.load_env()

    def load(self):
        try:
            with open(self.file_path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError:
            raise DataError("config file not found", path=self.file_path)
        except json.JSONDecodeError as e:
            raise DataError(f"config is not valid JSON: {e.msg}", path=self.file_path, line=e.lineno)
        if not isinstance(data, dict):
            raise DataError("config must be a JSON object", path=self.file_path)
        self.update(data)

    def load_env(self):
        load_dotenv()
        for variable, key in ENV_OVERRIDES.items():
            value = os.getenv(variable)
            if value:
                logger.info(f"{key} taken from {variable}")
                self.set(key, value)

    def save(self, file_path=None):
        atomic_write_json(file_path or self.file_path, self.settings)

    def get(self, key):
        return self.settings.get(key)

    def set(self, key, value):
        if key not in self.settings:
            raise ConfigurationError(f"unknown config key '{key}'")
        self.settings[key] = _coerce(key, value)

    def update(self, values):
        for key, value in values.items():
            if value is not None:
                self.set(key, value)

    def config(self, overrides: Optional[dict] = None) -> TrainConfig:
        if overrides:
            self.update(overrides)
        return TrainConfig(**self.settings).validate()
