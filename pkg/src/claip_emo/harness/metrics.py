"""Confusion matrices and unweighted/weighted average recall."""
from typing import Sequence, Tuple

import numpy as np
from sklearn import metrics

from claip_emo.errors import DataError, LabelError
from claip_emo.logger import get_logger

logger = get_logger(__name__)


def _checked(labels: Sequence[int], preds: Sequence[int], num_classes: int) -> Tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    if labels.shape != preds.shape:
        raise DataError(f"{labels.size} labels but {preds.size} predictions")
    for name, values in (("label", labels), ("prediction", preds)):
        if values.size and (values.min() < 0 or values.max() >= num_classes):
            raise LabelError(f"every {name} must lie in [0, {num_classes})")
    return labels, preds


def confusion_matrix(labels: Sequence[int], preds: Sequence[int], num_classes: int) -> np.ndarray:
    """[K, K] counts; row = true class, column = predicted class."""
    labels, preds = _checked(labels, preds, num_classes=num_classes)
    if not labels.size:
        return np.zeros((num_classes, num_classes), dtype=np.int64)
    return metrics.confusion_matrix(labels, preds, labels=np.arange(num_classes)).astype(np.int64)


def recall_scores(labels: Sequence[int], preds: Sequence[int], num_classes: int) -> Tuple[float, float]:
    """(UAR, WAR): macro recall over the classes present, and accuracy.

    Classes with no evaluation samples are left out of the UAR mean and a
    warning is logged.

    Raises:
        DataError: if there are no samples at all.
    """
    labels, preds = _checked(labels, preds, num_classes=num_classes)
    if not labels.size:
        raise DataError("cannot compute recall without evaluation samples")
    present = np.unique(labels)
    if present.size < num_classes:
        absent = sorted(set(range(num_classes)) - set(present.tolist()))
        logger.warning(f"classes {absent} have no evaluation samples and are excluded from UAR")
    uar = metrics.recall_score(labels, preds, labels=present, average="macro", zero_division=0)
    war = metrics.accuracy_score(labels, preds)
    return float(uar), float(war)


def uar_war(confusion: np.ndarray) -> Tuple[float, float]:
    """(UAR, WAR) of a [K, K] confusion matrix, scored like ``recall_scores``.

    Raises:
        DataError: if the matrix is not square, has negative counts or is empty.
    """
    confusion = np.asarray(confusion)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise DataError(f"confusion matrix must be square, got shape {confusion.shape}")
    if np.any(confusion < 0):
        raise DataError("confusion matrix holds negative counts")
    k = confusion.shape[0]
    counts = confusion.astype(np.int64).reshape(-1)
    labels = np.repeat(np.repeat(np.arange(k), k), counts)
    preds = np.repeat(np.tile(np.arange(k), k), counts)
    return recall_scores(labels, preds, num_classes=k)
