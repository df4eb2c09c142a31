"""Run configuration: typed sections, file loading, overrides and the
reproducibility record written next to every run.

Config files are INI-like (see docs/config_format.md). Keys before the
first ``[section]`` header are top-level. Every value is merged over
``configs.get_default_run_settings()`` and validated into a ``RunConfig``.
"""
import configparser
import difflib
import json
import os
import platform
from typing import Dict, List, Optional, Tuple

import numpy as np
import pydantic
from pydantic import BaseModel

from claip_emo import configs, enums, utils, validation
from claip_emo.errors import ConfigError, InvalidConfigValueError, UnknownConfigKeyError
from claip_emo.enums import ArtifactName
from claip_emo.version import get_version

_TOP_SECTION = "__top__"
_NONE_LITERALS = {"", "none", "null"}


class AudioSettings(BaseModel):
    sample_rate: int = 16000
    window: int = 400
    hop: int = 160
    n_fft: Optional[int] = None
    n_mels: int = 64
    f_min: float = 50.0
    f_max: float = 8000.0


class VisualSettings(BaseModel):
    # None means "take it from the preset"
    depth: Optional[int] = None
    d_model: Optional[int] = None
    n_heads: Optional[int] = None
    mlp_ratio: Optional[float] = None
    image_size: int = 32
    channels: int = 1
    patch: int = 8


class AudioEncoderSettings(BaseModel):
    depth: Optional[int] = None
    d_model: Optional[int] = None
    n_heads: Optional[int] = None
    mlp_ratio: Optional[float] = None
    patch_time: int = 8
    patch_mel: int = 64
    max_patches: int = 64
    use_pos_embed: bool = True


class LoraSettings(BaseModel):
    rank: int = 8
    alpha: float = 32.0
    dropout: float = 0.1
    full_finetune: bool = False


class AggSettings(BaseModel):
    visual: str = enums.AggregationMode.transformer.value
    audio: str = enums.AggregationMode.mean.value

    @pydantic.validator("visual", "audio")
    def validate_mode(cls, value):
        return validation.validate_str_against_enum(value=value, enum_class=enums.AggregationMode)


class ClipSettings(BaseModel):
    frames: int = 8
    duration: float = 1.0


class TrainSettings(BaseModel):
    epochs: int = 30
    batch_size: int = 16
    lr_peak: float = 1e-5
    lr_min: float = 0.0
    warmup_epochs: Optional[int] = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: Optional[float] = None
    validate_each_epoch: bool = False
    test_mode: bool = False

    @property
    def resolved_warmup_epochs(self) -> int:
        if self.warmup_epochs is not None:
            return self.warmup_epochs
        if self.epochs <= 1:
            return 0
        return max(1, int(self.epochs * 5 / 100))


class DataSettings(BaseModel):
    num_classes: int = 7
    clips_per_class: int = 50
    class_counts: Optional[List[int]] = None
    sigma_v: float = 0.3
    sigma_a: float = 0.1
    rho: float = 0.5
    temporal_order: bool = False
    n_folds: int = 5

    @pydantic.validator("class_counts", pre=True)
    def parse_counts(cls, value):
        if isinstance(value, str):
            return [int(v) for v in value.strip("[] ").replace(",", " ").split()]
        return value

    def counts(self) -> List[int]:
        if self.class_counts is not None:
            return list(self.class_counts)
        return [self.clips_per_class] * self.num_classes


class AblateSettings(BaseModel):
    max_folds: Optional[int] = None


class RunConfig(BaseModel):
    preset: str = enums.BackbonePreset.base.value
    fusion: str = enums.FusionMode.concat_linear.value
    modality: str = enums.Modality.audiovisual.value
    seed: int = 0
    audio: AudioSettings = pydantic.Field(default_factory=AudioSettings)
    visual: VisualSettings = pydantic.Field(default_factory=VisualSettings)
    audio_encoder: AudioEncoderSettings = pydantic.Field(default_factory=AudioEncoderSettings)
    lora: LoraSettings = pydantic.Field(default_factory=LoraSettings)
    agg: AggSettings = pydantic.Field(default_factory=AggSettings)
    clip: ClipSettings = pydantic.Field(default_factory=ClipSettings)
    train: TrainSettings = pydantic.Field(default_factory=TrainSettings)
    data: DataSettings = pydantic.Field(default_factory=DataSettings)
    ablate: AblateSettings = pydantic.Field(default_factory=AblateSettings)

    @pydantic.validator("preset")
    def validate_preset(cls, value):
        return validation.validate_str_against_enum(value=value, enum_class=enums.BackbonePreset)

    @pydantic.validator("fusion")
    def validate_fusion(cls, value):
        return validation.validate_str_against_enum(value=value, enum_class=enums.FusionMode)

    @pydantic.validator("modality")
    def validate_modality(cls, value):
        return validation.validate_str_against_enum(value=value, enum_class=enums.Modality)

    def to_dict(self) -> dict:
        return self.dict()

    def with_overrides(self, overrides: Dict[str, object]) -> "RunConfig":
        """Returns a validated copy with dotted-key overrides applied."""
        check_known_keys(overrides.keys())
        merged = utils.unflatten_dict({**utils.flatten_dict(self.to_dict()), **overrides})
        return build_run_config(merged)


def valid_keys() -> List[str]:
    return sorted(utils.flatten_dict(configs.get_default_run_settings()).keys())


def check_known_keys(keys) -> None:
    """Raises UnknownConfigKeyError naming the nearest valid key."""
    known = valid_keys()
    for key in keys:
        if key not in known:
            nearest = difflib.get_close_matches(key, known, n=1)
            hint = f"; did you mean `{nearest[0]}`?" if nearest else ""
            raise UnknownConfigKeyError(f"unknown config key `{key}`{hint}")


def _coerce(value):
    if isinstance(value, str) and value.strip().lower() in _NONE_LITERALS:
        return None
    return value


def build_run_config(nested: dict) -> RunConfig:
    try:
        cfg = RunConfig(**nested)
    except pydantic.ValidationError as e:
        errors = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise InvalidConfigValueError(errors)
    validate_run_config(cfg)
    return cfg


def validate_run_config(cfg: RunConfig) -> None:
    """Cross-field checks that pydantic field validators cannot express."""
    train = cfg.train
    if train.epochs < 0:
        raise InvalidConfigValueError(f"train.epochs must be >= 0, got {train.epochs}")
    if train.batch_size < 1:
        raise InvalidConfigValueError(f"train.batch_size must be >= 1, got {train.batch_size}")
    if train.epochs > 0 and train.resolved_warmup_epochs >= train.epochs:
        raise InvalidConfigValueError(
            f"train.warmup_epochs ({train.resolved_warmup_epochs}) must be < train.epochs ({train.epochs})")
    if train.lr_min > train.lr_peak:
        raise InvalidConfigValueError(
            f"train.lr_min ({train.lr_min}) must be <= train.lr_peak ({train.lr_peak})")
    validation.validate_probability(value=cfg.lora.dropout, name="lora.dropout")
    validation.validate_positive_int(value=cfg.lora.rank, name="lora.rank", allow_zero=True)
    data = cfg.data
    if data.num_classes < 2:
        raise InvalidConfigValueError(f"data.num_classes must be >= 2, got {data.num_classes}")
    if data.class_counts is not None and len(data.class_counts) != data.num_classes:
        raise InvalidConfigValueError(
            f"data.class_counts lists {len(data.class_counts)} counts for {data.num_classes} classes")
    validation.validate_probability(value=data.rho, name="data.rho", allow_one=True)
    if data.sigma_v < 0 or data.sigma_a < 0:
        raise InvalidConfigValueError("data.sigma_v and data.sigma_a must be >= 0")
    if cfg.clip.frames < 1:
        raise InvalidConfigValueError(f"clip.frames must be >= 1, got {cfg.clip.frames}")


def parse_config_text(text: str) -> Dict[str, object]:
    """Parses config file text into a flat dotted-key dict of raw strings."""
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#", ";"), inline_comment_prefixes=("#",),
        interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    try:
        parser.read_string(f"[{_TOP_SECTION}]\n{text}")
    except configparser.Error as e:
        raise ConfigError(f"could not parse config: {e}")
    flat = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            dotted = key if section == _TOP_SECTION else f"{section}.{key}"
            flat[dotted] = _coerce(value)
    return flat


def parse_override(assignment: str) -> Tuple[str, object]:
    if "=" not in assignment:
        raise ConfigError(f"override `{assignment}` must look like key=value")
    key, value = assignment.split("=", 1)
    return key.strip(), _coerce(value.strip())


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, object]] = None,
                    seed: Optional[int] = None) -> RunConfig:
    """Resolves defaults <- file <- overrides <- seed into a RunConfig.

    Raises:
        UnknownConfigKeyError: for any key not in the defaults.
        InvalidConfigValueError: for values failing validation.
    """
    flat: Dict[str, object] = {}
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file `{path}` does not exist")
        with open(path, "r", encoding="utf8") as f:
            flat.update(parse_config_text(f.read()))
    if overrides:
        flat.update(overrides)
    if seed is not None:
        flat["seed"] = seed
    check_known_keys(flat.keys())
    # explicit None in a file must survive merge_dicts, which skips None
    explicit_none = [k for k, v in flat.items() if v is None]
    merged = utils.flatten_dict(utils.merge_dicts(
        base=configs.get_default_run_settings(), preferences=utils.unflatten_dict(flat)))
    for key in explicit_none:
        merged[key] = None
    return build_run_config(utils.unflatten_dict(merged))


def run_stamp(cfg: RunConfig, threads: int) -> dict:
    return {
        "seed": cfg.seed,
        "claip_emo_version": get_version(),
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "threads": threads,
    }


def write_run_record(cfg: RunConfig, out_dir: str, threads: int) -> None:
    """Writes config.resolved.json and run_stamp.json into out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, ArtifactName.resolved_config), "w", encoding="utf8") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, ArtifactName.run_stamp), "w", encoding="utf8") as f:
        json.dump(run_stamp(cfg, threads=threads), f, indent=2, sort_keys=True)
