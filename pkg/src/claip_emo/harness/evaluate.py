"""Per-fold evaluation, k-fold cross-validation and reference baselines."""
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.linear_model import RidgeClassifier
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from claip_emo import enums
from claip_emo.adaptation.accounting import count_params
from claip_emo.audio.frontend import AudioFrontend
from claip_emo.config import RunConfig
from claip_emo.enums import ArtifactName, ReportColumn
from claip_emo.harness.folds import check_no_leakage, train_eval_split
from claip_emo.harness.metrics import confusion_matrix, recall_scores, uar_war
from claip_emo.harness.synthetic import SyntheticDataset
from claip_emo.logger import get_logger
from claip_emo.model.claip_model import build_model
from claip_emo.numerics.module import Module
from claip_emo.parallel import run_jobs
from claip_emo.training.trainer import train

logger = get_logger(__name__)


@dataclass
class FoldReport:
    fold: int
    confusion: np.ndarray
    uar: float
    war: float
    trainable: int = 0
    total: int = 0

    @property
    def ratio(self) -> float:
        return self.trainable / self.total if self.total else 0.0

    @property
    def trainable_millions(self) -> float:
        return self.trainable / 1e6

    def to_row(self) -> dict:
        return {ReportColumn.fold: self.fold, ReportColumn.uar: self.uar, ReportColumn.war: self.war,
                ReportColumn.trainable_m: self.trainable_millions, ReportColumn.ratio: self.ratio}


class ConstantPredictor:
    """Predicts one class for every clip."""

    def __init__(self, label: int, num_classes: int):
        self.label = label
        self.num_classes = num_classes

    @classmethod
    def majority(cls, labels: Sequence[int], num_classes: int) -> "ConstantPredictor":
        counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes)
        return cls(label=int(np.argmax(counts)), num_classes=num_classes)

    def predict_labels(self, samples: Sequence, batch_size: int = 32) -> np.ndarray:
        return np.full(len(samples), self.label, dtype=np.int64)


def evaluate(model, eval_set: Sequence, fold: int = 0, num_classes: Optional[int] = None,
             train_ids: Optional[Sequence[str]] = None, batch_size: int = 32) -> FoldReport:
    """Scores ``model`` (anything with ``predict_labels``) on ``eval_set``.

    Raises:
        FoldLeakageError: if ``train_ids`` shares a clip with ``eval_set``.
    """
    eval_set = list(eval_set)
    if train_ids is not None:
        check_no_leakage(train_ids=train_ids, eval_ids=[s.id for s in eval_set])
    num_classes = num_classes if num_classes is not None else model.num_classes
    preds = model.predict_labels(eval_set, batch_size=batch_size)
    labels = [s.label for s in eval_set]
    uar, war = recall_scores(labels, preds, num_classes=num_classes)
    confusion = confusion_matrix(labels, preds, num_classes=num_classes)
    trainable = total = 0
    if isinstance(model, Module):
        params = count_params(model)
        trainable, total = params.trainable, params.total
    return FoldReport(fold=fold, confusion=confusion, uar=uar, war=war, trainable=trainable, total=total)


@dataclass
class CrossValidationResult:
    reports: List[FoldReport] = field(default_factory=list)

    def pooled(self) -> Tuple[float, float]:
        """(UAR, WAR) of the confusion matrices summed over folds."""
        return uar_war(np.sum([r.confusion for r in self.reports], axis=0))

    def summary(self) -> dict:
        """Mean and population standard deviation over folds, then the pooled scores."""
        uars = np.asarray([r.uar for r in self.reports])
        wars = np.asarray([r.war for r in self.reports])
        uar_pooled, war_pooled = self.pooled()
        return {"uar_mean": float(uars.mean()), "uar_std": float(uars.std()),
                "war_mean": float(wars.mean()), "war_std": float(wars.std()),
                "uar_pooled": uar_pooled, "war_pooled": war_pooled}

    def to_frame(self) -> pd.DataFrame:
        """One row per fold, then ``mean`` and ``std`` rows."""
        rows = [r.to_row() for r in self.reports]
        frame = pd.DataFrame(rows, columns=[ReportColumn.fold, ReportColumn.uar, ReportColumn.war,
                                            ReportColumn.trainable_m, ReportColumn.ratio])
        numeric = frame.drop(columns=[ReportColumn.fold])
        mean_row = {ReportColumn.fold: "mean", **numeric.mean().to_dict()}
        std_row = {ReportColumn.fold: "std", **numeric.std(ddof=0).to_dict()}
        frame[ReportColumn.fold] = frame[ReportColumn.fold].astype(object)
        return pd.concat([frame, pd.DataFrame([mean_row, std_row])], ignore_index=True)


def write_report(result: CrossValidationResult, out_dir: str) -> str:
    path = os.path.join(out_dir, ArtifactName.report)
    result.to_frame().to_csv(path, index=False)
    return path


def cross_validate(cfg: RunConfig, dataset: SyntheticDataset, folds: Sequence[Sequence[str]],
                   out_dir: Optional[str] = None, threads: int = 1,
                   max_folds: Optional[int] = None) -> CrossValidationResult:
    """Trains a fresh model per fold on the other folds and evaluates it.

    Per-fold artifacts go to ``out_dir/fold<k>/``; report.csv to ``out_dir``.
    """
    n_folds = len(folds) if max_folds is None else min(max_folds, len(folds))

    def fold_job(k: int):
        def job() -> FoldReport:
            train_ids, eval_ids = train_eval_split(folds, fold=k)
            check_no_leakage(train_ids=train_ids, eval_ids=eval_ids)
            train_set, eval_set = dataset.by_ids(train_ids), dataset.by_ids(eval_ids)
            fold_dir = os.path.join(out_dir, f"fold{k}") if out_dir is not None else None
            model = build_model(cfg)
            train(model, train_set, cfg=cfg, out_dir=fold_dir,
                  val_set=eval_set if cfg.train.validate_each_epoch else None)
            report = evaluate(model, eval_set, fold=k, train_ids=train_ids, batch_size=cfg.train.batch_size)
            logger.info(f"fold {k}: uar={report.uar:.4f} war={report.war:.4f}")
            return report
        return job

    reports = run_jobs([fold_job(k) for k in range(n_folds)], threads=threads, name="folds")
    result = CrossValidationResult(reports=reports)
    summary = result.summary()
    logger.info(f"{n_folds}-fold uar={summary['uar_mean']:.4f}+-{summary['uar_std']:.4f} "
                f"war={summary['war_mean']:.4f}+-{summary['war_std']:.4f}")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_report(result, out_dir)
    return result


def raw_modality_features(samples: Sequence, modality: str, frontend: AudioFrontend) -> np.ndarray:
    """Untrained per-clip features: time-averaged pixels and/or log-mels."""
    parts = []
    if modality in (enums.Modality.visual.value, enums.Modality.audiovisual.value):
        parts.append(np.stack([s.frames.mean(axis=0).reshape(-1) for s in samples]))
    if modality in (enums.Modality.audio.value, enums.Modality.audiovisual.value):
        parts.append(np.stack([frontend(s.waveform).frames.data.mean(axis=0) for s in samples]))
    return np.concatenate(parts, axis=1).astype(np.float64)


class RawFeatureReadout:
    """Ridge classifier over untrained per-clip features.

    Shows how far the raw inputs of one modality, or both, separate the
    classes without any encoder.
    """

    def __init__(self, num_classes: int, modality: str = enums.Modality.audiovisual.value,
                 frontend: Optional[AudioFrontend] = None, ridge: float = 1e-1):
        self.num_classes = num_classes
        self.modality = modality
        self.frontend = frontend if frontend is not None else AudioFrontend()
        self.pipeline = make_pipeline(StandardScaler(), RidgeClassifier(alpha=ridge))

    def features(self, samples: Sequence) -> np.ndarray:
        return raw_modality_features(samples, modality=self.modality, frontend=self.frontend)

    def fit(self, samples: Sequence) -> "RawFeatureReadout":
        samples = list(samples)
        self.pipeline.fit(self.features(samples), np.asarray([s.label for s in samples], dtype=np.int64))
        return self

    def predict_labels(self, samples: Sequence, batch_size: int = 32) -> np.ndarray:
        return self.pipeline.predict(self.features(list(samples))).astype(np.int64)
