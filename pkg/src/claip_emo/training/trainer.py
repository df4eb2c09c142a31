"""Fixed-epoch training loop: shuffled mini-batches, cross-entropy, Adam
with warmup + cosine, per-epoch history and checkpoints.
"""
import math
import os
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import more_itertools
import numpy as np
import pandas as pd

from claip_emo import utils
from claip_emo.backbones import checkpoint
from claip_emo.config import RunConfig
from claip_emo.enums import ArtifactName, HistoryColumn
from claip_emo.errors import DataError, NonFiniteLossError, TrainingError
from claip_emo.harness.folds import check_no_leakage, save_train_ids
from claip_emo.harness.metrics import recall_scores
from claip_emo.logger import get_logger
from claip_emo.model.claip_model import ClaipEmoModel, ClipBatch
from claip_emo.numerics.tensor import Tape
from claip_emo.training.losses import cross_entropy
from claip_emo.training.optim import Adam
from claip_emo.training.schedule import CosineWarmupSchedule, lr_at

logger = get_logger(__name__)

HISTORY_COLUMNS = [HistoryColumn.epoch, HistoryColumn.loss, HistoryColumn.lr, HistoryColumn.uar,
                   HistoryColumn.war, HistoryColumn.val_uar, HistoryColumn.val_war]


@dataclass
class TrainResult:
    model: ClaipEmoModel
    history: pd.DataFrame
    steps: int

    @property
    def final_loss(self) -> float:
        if self.history.empty:
            return float("nan")
        return float(self.history[HistoryColumn.loss].iloc[-1])


def _frozen_snapshot(model: ClaipEmoModel) -> Dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in model.named_parameters() if not p.requires_grad}


def _check_frozen_unchanged(model: ClaipEmoModel, reference: Dict[str, np.ndarray], epoch: int) -> None:
    params = dict(model.named_parameters())
    for name, array in reference.items():
        if not np.array_equal(params[name].data, array):
            raise TrainingError(f"frozen tensor `{name}` changed during epoch {epoch}")


def _save_last_good(model: ClaipEmoModel, last_good: Optional[Dict[str, np.ndarray]],
                    out_dir: Optional[str]) -> Optional[str]:
    if last_good is not None:
        params = dict(model.named_parameters())
        for name, array in last_good.items():
            params[name].data = array
    if out_dir is None:
        return None
    path = os.path.join(out_dir, ArtifactName.last_good)
    checkpoint.save_module(model, path)
    return path


def train(model: ClaipEmoModel, train_set: Sequence, cfg: RunConfig, out_dir: Optional[str] = None,
          val_set: Optional[Sequence] = None) -> TrainResult:
    """Trains ``model`` in place on ``train_set`` for ``cfg.train.epochs``.

    Writes init.ckpt, train_ids.json and model.ckpt to ``out_dir`` when one
    is given, and rewrites history.csv and trainlog.jsonl after every epoch.
    With ``cfg.train.test_mode`` every frozen tensor is compared bitwise
    against its initial value after each epoch.

    Raises:
        FoldLeakageError: if a clip id appears in both train and val sets.
        NonFiniteLossError: on a NaN/Inf loss, after restoring and (with an
            out_dir) writing the last good parameters to last_good.ckpt.
    """
    settings = cfg.train
    train_set = list(train_set)
    if not train_set:
        raise DataError("training set is empty")
    if val_set is not None:
        check_no_leakage(train_ids=[s.id for s in train_set], eval_ids=[s.id for s in val_set])
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        checkpoint.save_module(model, os.path.join(out_dir, ArtifactName.init_model))
        save_train_ids([s.id for s in train_set], os.path.join(out_dir, ArtifactName.train_ids))

    steps_per_epoch = math.ceil(len(train_set) / settings.batch_size)
    schedule = CosineWarmupSchedule.from_settings(settings, steps_per_epoch=steps_per_epoch)
    optimizer = Adam.from_settings(model.trainable_parameters(), train=settings)
    order_rng = np.random.default_rng(cfg.seed)
    frozen_reference = _frozen_snapshot(model) if settings.test_mode else None
    logger.info(f"training {len(optimizer)} tensors on {len(train_set)} clips: "
                f"{settings.epochs} epochs x {steps_per_epoch} steps, warmup {schedule.warmup_steps} steps")

    rows = []
    step = 0
    lr = lr_at(0, schedule)
    last_good = None
    for epoch in range(1, settings.epochs + 1):
        model.train()
        loss_sum = 0.0
        preds, labels = [], []
        for indices in more_itertools.chunked(order_rng.permutation(len(train_set)), settings.batch_size):
            batch = ClipBatch.from_samples([train_set[i] for i in indices])
            with Tape() as tape:
                logits = model(batch)
                loss = cross_entropy(logits, batch.labels)
            value = loss.item()
            if not np.isfinite(value):
                snapshot = _save_last_good(model, last_good=last_good, out_dir=out_dir)
                raise NonFiniteLossError(
                    f"loss became {value} at epoch {epoch}, step {step + 1}"
                    + (f"; last good parameters saved to {snapshot}" if snapshot else ""),
                    snapshot_path=snapshot)
            step += 1
            lr = lr_at(step, schedule)
            if len(optimizer):
                tape.backward(loss)
                last_good = {name: p.data.copy() for name, p in optimizer.params}
                optimizer.step(lr)
                optimizer.zero_grad()
            loss_sum += value * len(batch)
            preds.append(np.argmax(logits.data, axis=-1))
            labels.append(batch.labels)

        uar, war = recall_scores(np.concatenate(labels), np.concatenate(preds), num_classes=model.num_classes)
        row = {HistoryColumn.epoch: epoch, HistoryColumn.loss: loss_sum / len(train_set),
               HistoryColumn.lr: lr, HistoryColumn.uar: uar, HistoryColumn.war: war,
               HistoryColumn.val_uar: float("nan"), HistoryColumn.val_war: float("nan")}
        if settings.validate_each_epoch and val_set:
            val_preds = model.predict_labels(list(val_set), batch_size=settings.batch_size)
            row[HistoryColumn.val_uar], row[HistoryColumn.val_war] = recall_scores(
                [s.label for s in val_set], val_preds, num_classes=model.num_classes)
        rows.append(row)
        if out_dir is not None:
            write_history(pd.DataFrame(rows, columns=HISTORY_COLUMNS), out_dir=out_dir)
        logger.info(f"epoch {epoch}/{settings.epochs} loss={row[HistoryColumn.loss]:.4f} lr={lr:.3e} "
                    f"uar={uar:.4f} war={war:.4f} val_uar={row[HistoryColumn.val_uar]:.4f} "
                    f"val_war={row[HistoryColumn.val_war]:.4f}")
        if frozen_reference is not None:
            _check_frozen_unchanged(model, reference=frozen_reference, epoch=epoch)

    model.eval()
    history = pd.DataFrame(rows, columns=HISTORY_COLUMNS)
    if out_dir is not None:
        if history.empty:
            write_history(history, out_dir=out_dir)
        checkpoint.save_module(model, os.path.join(out_dir, ArtifactName.model))
    return TrainResult(model=model, history=history, steps=step)


def write_history(history: pd.DataFrame, out_dir: str) -> None:
    history.to_csv(os.path.join(out_dir, ArtifactName.history), index=False)
    records = [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()}
               for row in history.to_dict(orient="records")]
    with open(os.path.join(out_dir, ArtifactName.trainlog), "w", encoding="utf8") as f:
        f.write(utils.dicts_to_jsonl(records))
