"""
Configuration Module

Dataclasses for every tunable of an experiment and the plain `key = value`
file format that carries them. Keys are field names, optionally qualified by
their section (`model.base_width`). The resolved configuration always dumps
fully qualified so that parse_config(dump_config(c)) == c.
"""

import dataclasses
import logging
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

from errors import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    """Shape of the network: residual encoders, projection heads and decoder."""
    stages: int = 4
    base_width: int = 8
    blocks_per_stage: int = 2
    proj_dim: int = 32
    num_classes: int = 4
    input_size: Tuple[int, int] = (48, 48)

    def width(self, stage: int) -> int:
        """Channels of 1-based stage `stage`."""
        return self.base_width * 2 ** (stage - 1)

    def validate(self) -> None:
        if self.stages < 2:
            raise ConfigurationError(f"model.stages must be >= 2, got {self.stages}")
        if self.base_width < 4:
            raise ConfigurationError(f"model.base_width must be >= 4, got {self.base_width}")
        if self.blocks_per_stage < 1:
            raise ConfigurationError(f"model.blocks_per_stage must be >= 1, got {self.blocks_per_stage}")
        if self.proj_dim < 2:
            raise ConfigurationError(f"model.proj_dim must be >= 2, got {self.proj_dim}")
        if self.num_classes < 2:
            raise ConfigurationError(f"model.num_classes must be >= 2, got {self.num_classes}")
        factor = 2 ** (self.stages - 1)
        for extent in self.input_size:
            if extent < factor or extent % factor:
                raise ConfigurationError(
                    f"model.input_size {self.input_size} must be divisible by 2^(stages-1) = {factor}")


@dataclass
class TrainConfig:
    """Training loop settings. The contrastive switch lives in LossWeights.beta."""
    epochs: int = 30
    batch_size: int = 4
    lr: float = 1e-3
    seed: int = 0
    checkpoint_every: int = 5
    eval_every: int = 5
    modality_dropout_p: float = 0.0
    val_cases: int = 2
    augment: bool = True

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigurationError(f"train.epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigurationError(f"train.lr must be positive, got {self.lr}")
        if self.checkpoint_every < 1 or self.eval_every < 1:
            raise ConfigurationError("train.checkpoint_every and train.eval_every must be >= 1")
        if not 0.0 <= self.modality_dropout_p <= 1.0:
            raise ConfigurationError(f"train.modality_dropout_p must lie in [0, 1], got {self.modality_dropout_p}")
        if self.val_cases < 0:
            raise ConfigurationError(f"train.val_cases must be >= 0, got {self.val_cases}")


@dataclass
class LossWeights:
    """Weights of the composite loss; beta = 0 switches the contrastive term off."""
    w_dice: float = 0.5
    w_focal: float = 0.5
    beta: float = 0.0
    temperature: float = 1.0

    def validate(self) -> None:
        if self.w_dice < 0 or self.w_focal < 0:
            raise ConfigurationError(f"loss weights must be >= 0, got {self.w_dice}, {self.w_focal}")
        if self.beta < 0:
            raise ConfigurationError(f"loss.beta must be >= 0, got {self.beta}")
        if not self.temperature > 0:
            raise ConfigurationError(f"loss.temperature must be positive, got {self.temperature}")


@dataclass
class FocalParams:
    alpha: float = 0.25
    gamma: float = 2.0
    clamp_eps: float = 1e-7

    def validate(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"focal.alpha must lie in (0, 1), got {self.alpha}")
        if self.gamma < 0:
            raise ConfigurationError(f"focal.gamma must be >= 0, got {self.gamma}")
        if not 0.0 < self.clamp_eps < 0.5:
            raise ConfigurationError(f"focal.clamp_eps must lie in (0, 0.5), got {self.clamp_eps}")


@dataclass
class AugmentConfig:
    """Flip, rotate/shift, crop and resize settings for 2D slices.

    crop_size and final_size default to the full-resolution 224/240 geometry;
    scaled_to() maps them onto smaller desk-scale slices.
    """
    hflip_p: float = 0.5
    vflip_p: float = 0.5
    rotate_limit_deg: float = 20.0
    shift_limit: float = 0.1
    shift_rotate_p: float = 0.5
    crop_size: int = 224
    final_size: int = 240
    seed: int = 0

    def scaled_to(self, extent: int) -> "AugmentConfig":
        """Same augmentation with crop/resize rescaled to a slice of side `extent`."""
        crop = max(1, int(round(extent * self.crop_size / self.final_size)))
        return dataclasses.replace(self, crop_size=min(crop, extent), final_size=extent)

    def validate(self) -> None:
        for name in ("hflip_p", "vflip_p", "shift_rotate_p"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"augment.{name} must lie in [0, 1], got {value}")
        if self.rotate_limit_deg < 0 or self.shift_limit < 0:
            raise ConfigurationError("augment.rotate_limit_deg and augment.shift_limit must be >= 0")
        if self.crop_size < 1 or self.final_size < 1:
            raise ConfigurationError("augment.crop_size and augment.final_size must be >= 1")


@dataclass
class HD95Config:
    """Hausdorff-95 settings. one_empty_penalty None means the image diagonal."""
    percentile: float = 95.0
    empty_gt_empty_pred_value: float = 0.0
    one_empty_penalty: Optional[float] = None
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def validate(self) -> None:
        if not 0.0 < self.percentile <= 100.0:
            raise ConfigurationError(f"hd95.percentile must lie in (0, 100], got {self.percentile}")
        if any(s <= 0 for s in self.spacing):
            raise ConfigurationError(f"hd95.spacing must be positive, got {self.spacing}")


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    focal: FocalParams = field(default_factory=FocalParams)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    hd95: HD95Config = field(default_factory=HD95Config)

    def validate(self) -> "ExperimentConfig":
        for section in SECTIONS:
            getattr(self, section).validate()
        if self.loss.beta > 0 and self.train.batch_size < 2:
            raise ConfigurationError(
                f"train.batch_size must be >= 2 when the contrastive loss is enabled (beta = {self.loss.beta})")
        return self


SECTIONS = ("model", "train", "loss", "focal", "augment", "hd95")


# =========================================================================
# KEY = VALUE FORMAT
# =========================================================================

def _section_fields(config: ExperimentConfig) -> Dict[str, Dict[str, type]]:
    table = {}
    for section in SECTIONS:
        cls = type(getattr(config, section))
        hints = typing.get_type_hints(cls)
        table[section] = {f.name: hints[f.name] for f in dataclasses.fields(cls)}
    return table


def _resolve_key(key: str, table: Dict[str, Dict[str, type]]) -> Tuple[str, str]:
    if "." in key:
        section, name = key.split(".", 1)
        if section not in table or name not in table[section]:
            raise ConfigurationError(f"Unknown configuration key '{key}'")
        return section, name
    owners = [section for section in SECTIONS if key in table[section]]
    if not owners:
        raise ConfigurationError(f"Unknown configuration key '{key}'")
    if len(owners) > 1:
        candidates = ", ".join(f"{s}.{key}" for s in owners)
        raise ConfigurationError(f"Ambiguous configuration key '{key}'; use one of {candidates}")
    return owners[0], key


def _parse_scalar(text: str, kind: type, key: str):
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            value = float(text)
            if math.isnan(value):
                raise ValueError(text)
            return value
        return str(text)
    except ValueError:
        raise ConfigurationError(f"Invalid value '{text}' for '{key}' (expected {kind.__name__})")


def _parse_value(text: str, annotation, key: str):
    text = text.strip()
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin is Union:
        if text.lower() in ("none", "null", ""):
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _parse_value(text, inner, key)
    if origin in (tuple, Tuple):
        parts = [p for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]
        if args and args[-1] is not Ellipsis and len(parts) != len(args):
            raise ConfigurationError(f"'{key}' expects {len(args)} comma-separated values, got '{text}'")
        kinds = [args[0]] * len(parts) if args and args[-1] is Ellipsis else list(args)
        return tuple(_parse_scalar(p.strip(), k, key) for p, k in zip(parts, kinds))
    return _parse_scalar(text, annotation, key)


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_lines(lines: Iterable[str], base: Optional[ExperimentConfig] = None,
                origin: str = "<config>") -> ExperimentConfig:
    """Apply `key = value` lines on top of `base` (defaults when None).

    Blank lines and `#` comments are ignored. Validation is left to the caller
    so that further overrides can be layered first.
    """
    config = dataclasses.replace(base) if base is not None else ExperimentConfig()
    for section in SECTIONS:
        setattr(config, section, dataclasses.replace(getattr(config, section)))
    table = _section_fields(config)

    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{origin}:{number}: expected 'key = value', got '{raw.strip()}'")
        key, text = (part.strip() for part in line.split("=", 1))
        section, name = _resolve_key(key, table)
        value = _parse_value(text, table[section][name], key)
        setattr(getattr(config, section), name, value)
        logger.debug("%s:%d: %s.%s = %r", origin, number, section, name, value)
    return config


def parse_config(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    return parse_lines(text.splitlines(), base)


def load_config(path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    """Resolve defaults < file < `key=value` overrides and validate the result."""
    config = ExperimentConfig()
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise OSError(f"Cannot read configuration file {path}: {e}") from e
        config = parse_lines(text.splitlines(), config, origin=str(path))
    config = parse_lines(list(overrides), config, origin="--set")
    return config.validate()


def dump_config(config: ExperimentConfig) -> str:
    """Render every field as a fully qualified `section.key = value` line."""
    lines: List[str] = []
    for section in SECTIONS:
        lines.append(f"# {section}")
        for f in dataclasses.fields(getattr(config, section)):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(getattr(config, section), f.name))}")
    return "\n".join(lines) + "\n"
