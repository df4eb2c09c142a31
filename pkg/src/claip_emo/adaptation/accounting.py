"""Trainable-parameter accounting, per group and for the whole model."""
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict

import pandas as pd

from claip_emo.adaptation.lora import is_adapter_name
from claip_emo.enums import ModuleName, ParamGroup
from claip_emo.numerics.module import Module


@dataclass
class GroupCount:
    total: int = 0
    trainable: int = 0


@dataclass
class ParamReport:
    total: int
    trainable: int
    groups: "OrderedDict[str, GroupCount]" = field(default_factory=OrderedDict)

    @property
    def ratio(self) -> float:
        return self.trainable / self.total if self.total else 0.0

    @property
    def adapter_trainable(self) -> int:
        return (self.groups[ParamGroup.lora_visual].trainable
                + self.groups[ParamGroup.lora_audio].trainable)

    @property
    def adapter_share(self) -> float:
        """Adapter-only trainables as a fraction of all parameters."""
        return self.adapter_trainable / self.total if self.total else 0.0

    @property
    def trainable_millions(self) -> float:
        return self.trainable / 1e6

    def to_dict(self) -> Dict:
        return {
            "total": self.total,
            "trainable": self.trainable,
            "ratio": self.ratio,
            "adapter_share": self.adapter_share,
            "groups": {name: {"total": g.total, "trainable": g.trainable} for name, g in self.groups.items()},
        }


def param_group(name: str) -> str:
    """Maps a dotted parameter name of the assembled model to its group."""
    top = name.split(".", 1)[0]
    if top == ModuleName.visual:
        return ParamGroup.lora_visual if is_adapter_name(name) else ParamGroup.backbone_visual
    if top == ModuleName.audio:
        return ParamGroup.lora_audio if is_adapter_name(name) else ParamGroup.backbone_audio
    if top in (ModuleName.agg_visual, ModuleName.agg_audio):
        return ParamGroup.aggregator
    return ParamGroup.head


def count_params(model: Module) -> ParamReport:
    groups = OrderedDict((group, GroupCount()) for group in ParamGroup.ordered())
    total = trainable = 0
    for name, param in model.named_parameters():
        count = groups[param_group(name)]
        count.total += param.size
        total += param.size
        if param.requires_grad:
            count.trainable += param.size
            trainable += param.size
    return ParamReport(total=total, trainable=trainable, groups=groups)


def param_table(report: ParamReport) -> pd.DataFrame:
    """One row per group plus a ``total`` row."""
    rows = [{"group": name, "total": g.total, "trainable": g.trainable,
             "trainable_M": g.trainable / 1e6,
             "share_of_total": g.trainable / report.total if report.total else 0.0}
            for name, g in report.groups.items()]
    rows.append({"group": "total", "total": report.total, "trainable": report.trainable,
                 "trainable_M": report.trainable_millions, "share_of_total": report.ratio})
    return pd.DataFrame(rows, columns=["group", "total", "trainable", "trainable_M", "share_of_total"])
