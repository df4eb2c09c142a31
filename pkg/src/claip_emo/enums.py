"""Enums and constant-name classes used across the package."""
from enum import Enum


class AggregationMode(str, Enum):
    transformer = "transformer"
    mean = "mean"


class FusionMode(str, Enum):
    concat_linear = "concat_linear"
    additive = "additive"
    gated = "gated"


class Modality(str, Enum):
    audio = "A"
    visual = "V"
    audiovisual = "AV"


class EncoderKind(str, Enum):
    visual = "visual"
    audio = "audio"


class BackbonePreset(str, Enum):
    base = "B"
    large = "L"
    toy = "toy"


class ParamGroup:
    backbone_visual = "backbone.visual"
    backbone_audio = "backbone.audio"
    lora_visual = "lora.visual"
    lora_audio = "lora.audio"
    aggregator = "aggregator"
    head = "head"

    @classmethod
    def ordered(cls):
        return [cls.backbone_visual, cls.backbone_audio, cls.lora_visual,
                cls.lora_audio, cls.aggregator, cls.head]


class ModuleName:
    """Top level attribute names of the assembled model."""
    visual = "visual"
    audio = "audio"
    agg_visual = "agg_visual"
    agg_audio = "agg_audio"
    head = "head"


class HistoryColumn:
    epoch = "epoch"
    loss = "loss"
    lr = "lr"
    uar = "uar"
    war = "war"
    val_uar = "val_uar"
    val_war = "val_war"


class ReportColumn:
    fold = "fold"
    uar = "uar"
    war = "war"
    trainable_m = "trainable_M"
    ratio = "ratio"


class AblationColumn:
    group = "group"
    arm = "arm"
    uar_mean = "uar_mean"
    uar_std = "uar_std"
    war_mean = "war_mean"
    war_std = "war_std"
    trainable = "trainable"
    trainable_m = "trainable_M"
    ratio = "ratio"
    status = "status"


class ManifestField:
    id = "id"
    frames_path = "frames_path"
    wav_path = "wav_path"
    label = "label"
    carrier = "carrier"


class ArtifactName:
    manifest = "dataset.manifest"
    dataset_info = "dataset.json"
    folds = "folds.json"
    history = "history.csv"
    trainlog = "trainlog.jsonl"
    report = "report.csv"
    ablation_csv = "ablation.csv"
    ablation_md = "ablation.md"
    features = "features.csv"
    model = "model.ckpt"
    init_model = "init.ckpt"
    last_good = "last_good.ckpt"
    train_ids = "train_ids.json"
    adapters = "adapters.ckpt"
    resolved_config = "config.resolved.json"
    run_stamp = "run_stamp.json"


class EnvVars:
    CLAIP_THREADS = "CLAIP_THREADS"
    CLAIP_RUN_SLOW = "CLAIP_RUN_SLOW"
    CLAIP_LOG_LEVEL = "CLAIP_LOG_LEVEL"
