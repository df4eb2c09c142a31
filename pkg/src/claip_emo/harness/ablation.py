"""The ablation grid: adapter rank, temporal aggregation, fusion head and
input modality, each varied alone against the base configuration.

Every arm is cross-validated on the same dataset and folds. A failing arm
is recorded in the table and the grid carries on.
"""
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import pandas as pd

from claip_emo import enums
from claip_emo.config import RunConfig
from claip_emo.enums import AblationColumn, ArtifactName
from claip_emo.errors import ClaipError
from claip_emo.harness.evaluate import cross_validate
from claip_emo.harness.synthetic import SyntheticDataset
from claip_emo.logger import get_logger
from claip_emo.parallel import run_jobs

logger = get_logger(__name__)

ABLATION_COLUMNS = [AblationColumn.group, AblationColumn.arm, AblationColumn.uar_mean, AblationColumn.uar_std,
                    AblationColumn.war_mean, AblationColumn.war_std, AblationColumn.trainable,
                    AblationColumn.trainable_m, AblationColumn.ratio, AblationColumn.status]

RANKS = (0, 2, 4, 8, 16)
STATUS_OK = "ok"


class AblationGroup:
    lora = "lora"
    agg = "agg"
    fusion = "fusion"
    modality = "modality"


@dataclass
class AblationArm:
    group: str
    name: str
    overrides: Dict[str, object] = field(default_factory=dict)

    @property
    def slug(self) -> str:
        """Directory-safe name."""
        return f"{self.group}_{self.name}".replace("/", "-").replace("=", "")


def ablation_arms() -> List[AblationArm]:
    """The grid in report order."""
    trans, mean = enums.AggregationMode.transformer.value, enums.AggregationMode.mean.value
    arms = [AblationArm(group=AblationGroup.lora, name=f"r={r}",
                        overrides={"lora.rank": r, "lora.full_finetune": False}) for r in RANKS]
    arms.append(AblationArm(group=AblationGroup.lora, name="full", overrides={"lora.full_finetune": True}))
    for visual, audio in ((mean, mean), (trans, mean), (trans, trans)):
        name = f"{'trans' if visual == trans else 'mean'}/{'trans' if audio == trans else 'mean'}"
        arms.append(AblationArm(group=AblationGroup.agg, name=name,
                                overrides={"agg.visual": visual, "agg.audio": audio}))
    for mode in enums.FusionMode:
        arms.append(AblationArm(group=AblationGroup.fusion, name=mode.value, overrides={"fusion": mode.value}))
    for modality in (enums.Modality.audio, enums.Modality.visual, enums.Modality.audiovisual):
        arms.append(AblationArm(group=AblationGroup.modality, name=modality.value,
                                overrides={"modality": modality.value}))
    return arms


def _failed_row(arm: AblationArm, status: str) -> dict:
    nan = float("nan")
    return {AblationColumn.group: arm.group, AblationColumn.arm: arm.name,
            AblationColumn.uar_mean: nan, AblationColumn.uar_std: nan,
            AblationColumn.war_mean: nan, AblationColumn.war_std: nan,
            AblationColumn.trainable: -1, AblationColumn.trainable_m: nan,
            AblationColumn.ratio: nan, AblationColumn.status: status}


def run_arm(arm: AblationArm, cfg: RunConfig, dataset: SyntheticDataset, folds: Sequence[Sequence[str]],
            out_dir: Optional[str] = None) -> dict:
    """Cross-validates one arm and returns its table row."""
    try:
        arm_cfg = cfg.with_overrides(arm.overrides)
        arm_dir = os.path.join(out_dir, arm.slug) if out_dir is not None else None
        result = cross_validate(arm_cfg, dataset, folds, out_dir=arm_dir, max_folds=cfg.ablate.max_folds)
    except ClaipError as e:
        logger.warning(f"ablation arm {arm.group}:{arm.name} failed: {e}")
        return _failed_row(arm, status=f"failed: {e.code}")
    except (ValueError, ArithmeticError, MemoryError) as e:
        logger.warning(f"ablation arm {arm.group}:{arm.name} failed: {type(e).__name__}: {e}")
        return _failed_row(arm, status=f"failed: {type(e).__name__}")
    summary = result.summary()
    first = result.reports[0]
    return {AblationColumn.group: arm.group, AblationColumn.arm: arm.name,
            AblationColumn.uar_mean: summary["uar_mean"], AblationColumn.uar_std: summary["uar_std"],
            AblationColumn.war_mean: summary["war_mean"], AblationColumn.war_std: summary["war_std"],
            AblationColumn.trainable: first.trainable, AblationColumn.trainable_m: first.trainable_millions,
            AblationColumn.ratio: first.ratio, AblationColumn.status: STATUS_OK}


def run_ablation(cfg: RunConfig, dataset: SyntheticDataset, folds: Sequence[Sequence[str]],
                 out_dir: Optional[str] = None, threads: int = 1,
                 arms: Optional[Sequence[AblationArm]] = None) -> pd.DataFrame:
    """Runs every arm (concurrently when ``threads`` > 1) and returns the
    table in grid order. Writes ablation.csv and ablation.md to ``out_dir``."""
    arms = ablation_arms() if arms is None else list(arms)

    def arm_job(arm: AblationArm):
        return lambda: run_arm(arm, cfg=cfg, dataset=dataset, folds=folds, out_dir=out_dir)

    rows = run_jobs([arm_job(arm) for arm in arms], threads=threads, name="ablation arms")
    table = pd.DataFrame(rows, columns=ABLATION_COLUMNS)
    failed = int((table[AblationColumn.status] != STATUS_OK).sum())
    if failed:
        logger.warning(f"{failed} of {len(arms)} ablation arms failed")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        table.to_csv(os.path.join(out_dir, ArtifactName.ablation_csv), index=False)
        with open(os.path.join(out_dir, ArtifactName.ablation_md), "w", encoding="utf8") as f:
            f.write(to_markdown(table))
    return table


def _cell(value) -> str:
    if isinstance(value, float):
        return "-" if math.isnan(value) else f"{value:.4f}"
    return str(value)


def to_markdown(table: pd.DataFrame) -> str:
    """Pipe table with floats to four places; NaN prints as ``-``."""
    cells = table.astype(object).applymap(_cell)
    return cells.to_markdown(index=False, tablefmt="pipe", disable_numparse=True) + "\n"
