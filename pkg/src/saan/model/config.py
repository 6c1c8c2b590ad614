"""Training configuration and its TOML loader.

The file has ``[model]``, ``[pretrain]``, ``[finetune]`` and ``[ablation]``
sections plus an optional top-level ``seed``. Unknown keys and wrongly typed
values are collected and reported together.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from saan.imageops import Kind


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(problems))
        self.problems = problems


@dataclass
class ModelConfig:
    channels: int = 64
    input_size: int = 224
    hidden: list[int] = field(default_factory=lambda: [256, 64])
    zero_init_head: bool = True


@dataclass
class PretrainConfig:
    epochs: int = 40
    lr: float = 1e-3
    lr_step: int = 10
    lr_gamma: float = 0.1
    decay_until: int = 0  # 0: keep decaying for the whole run
    weight_decay: float = 5e-4
    batch_size: int = 64
    lambda_det: float = 0.1
    det_start_epoch: int = 30
    feature_dim: int = 64
    kinds_per_image: int = 3
    kinds: list[str] = field(default_factory=list)  # empty: every kind in the operation list


@dataclass
class FinetuneConfig:
    epochs: int = 50
    lr: float = 1e-5
    lr_step: int = 10
    lr_gamma: float = 0.1
    decay_until: int = 40
    weight_decay: float = 0.0
    batch_size: int = 64
    init_bias_to_mean: bool = True


@dataclass
class AblationConfig:
    use_sab: bool = True
    use_gab: bool = True
    use_fusion: bool = True
    levels: int = 3
    operation_list: str = "full"


@dataclass
class TrainConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def validate(self) -> "TrainConfig":
        problems = []
        ab = self.ablation
        if not (ab.use_sab or ab.use_gab):
            problems.append("ablation.use_sab/use_gab: at least one branch must be enabled")
        if ab.levels not in (2, 3):
            problems.append(f"ablation.levels: must be 2 or 3, got {ab.levels}")
        if ab.operation_list not in ("full", "legacy"):
            problems.append(f"ablation.operation_list: must be 'full' or 'legacy', got {ab.operation_list!r}")
        valid_kinds = {k.value for k in Kind}
        for k in self.pretrain.kinds:
            if k not in valid_kinds:
                problems.append(f"pretrain.kinds: unknown kind {k!r}")
        if self.model.channels % 2 or self.model.channels < 2:
            problems.append("model.channels: must be a positive even number")
        if self.model.input_size < 8:
            problems.append("model.input_size: must be at least 8")
        for section in ("pretrain", "finetune"):
            sec = getattr(self, section)
            for name in ("epochs", "batch_size", "lr_step"):
                if getattr(sec, name) < 1:
                    problems.append(f"{section}.{name}: must be >= 1")
            if sec.lr <= 0:
                problems.append(f"{section}.lr: must be positive")
        if self.pretrain.lambda_det < 0:
            problems.append("pretrain.lambda_det: must be non-negative")
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **sections) -> "TrainConfig":
        """Copy with per-section overrides, e.g. ``replace(ablation={"levels": 2})``."""
        data = self.to_dict()
        for name, values in sections.items():
            if isinstance(values, dict):
                data[name].update(values)
            else:
                data[name] = values
        return from_dict(data)


_SECTIONS = {
    "model": ModelConfig,
    "pretrain": PretrainConfig,
    "finetune": FinetuneConfig,
    "ablation": AblationConfig,
}


def _type_ok(value, default) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return True


def from_dict(data: dict) -> TrainConfig:
    problems: list[str] = []
    kwargs = {}
    for key, value in data.items():
        if key == "seed":
            if isinstance(value, int) and not isinstance(value, bool):
                kwargs["seed"] = value
            else:
                problems.append(f"seed: expected an integer, got {value!r}")
        elif key in _SECTIONS:
            cls = _SECTIONS[key]
            defaults = cls()
            known = {f.name for f in dataclasses.fields(cls)}
            if not isinstance(value, dict):
                problems.append(f"{key}: expected a table")
                continue
            section = {}
            for sub, sub_value in value.items():
                if sub not in known:
                    problems.append(f"{key}.{sub}: unknown key")
                elif not _type_ok(sub_value, getattr(defaults, sub)):
                    problems.append(f"{key}.{sub}: wrong type {type(sub_value).__name__}")
                else:
                    default = getattr(defaults, sub)
                    section[sub] = float(sub_value) if isinstance(default, float) else sub_value
            kwargs[key] = cls(**section)
        else:
            problems.append(f"{key}: unknown key")
    if problems:
        raise ConfigError(problems)
    return TrainConfig(**kwargs).validate()


def load_config(path: str | Path) -> TrainConfig:
    with open(path, "rb") as fh:
        try:
            data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError([f"{path}: {exc}"]) from None
    return from_dict(data)


def lr_at(epoch: int, lr: float, step: int, gamma: float, decay_until: int = 0) -> float:
    """Step-decayed learning rate for a 0-based epoch.

    With ``decay_until > 0`` only drops that fall inside the first
    ``decay_until`` epochs are applied.
    """
    e = epoch if decay_until <= 0 else min(epoch, decay_until - 1)
    return lr * gamma ** (e // step)
