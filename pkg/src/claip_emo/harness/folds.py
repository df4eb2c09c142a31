"""Stratified k-fold assignment and leakage checks."""
import json
import os
from typing import Dict, List, Sequence, Tuple

import numpy as np
from sklearn.model_selection import StratifiedKFold

from claip_emo.errors import DataError, FoldLeakageError, FoldSplitError


def make_folds(ids: Sequence[str], labels: Sequence[int], n_folds: int = 5, seed: int = 0) -> List[List[str]]:
    """Shuffled stratified k-fold split; each fold lists its ids in dataset order.

    Fold sizes, and each class's count per fold, stay within one clip of
    each other.

    Raises:
        FoldSplitError: if n_folds < 2 or some class has fewer clips than folds.
    """
    ids = list(ids)
    labels = np.asarray(labels, dtype=np.int64)
    if len(ids) != labels.size:
        raise FoldSplitError(f"{len(ids)} ids but {labels.size} labels")
    if n_folds < 2:
        raise FoldSplitError(f"need at least 2 folds, got {n_folds}")
    classes, counts = np.unique(labels, return_counts=True)
    if counts.min() < n_folds:
        smallest = int(classes[np.argmin(counts)])
        raise FoldSplitError(
            f"class {smallest} has {counts.min()} clips, fewer than the {n_folds} folds requested")
    splitter = StratifiedKFold(n_splits=n_folds, shuffle=True, random_state=seed)
    folds = [[ids[i] for i in np.sort(eval_idx)] for _, eval_idx in splitter.split(np.zeros(len(ids)), labels)]
    check_balanced(folds, label_of=dict(zip(ids, labels.tolist())))
    return folds


def check_balanced(folds: Sequence[Sequence[str]], label_of: Dict[str, int]) -> None:
    """Fold sizes and per-class fold counts may differ by at most one."""
    sizes = [len(members) for members in folds]
    if max(sizes) - min(sizes) > 1:
        raise FoldSplitError(f"fold sizes {sizes} differ by more than one")
    classes = sorted(set(label_of.values()))
    per_class = np.array([[sum(1 for i in members if label_of[i] == c) for c in classes] for members in folds])
    spread = per_class.max(axis=0) - per_class.min(axis=0)
    if spread.max() > 1:
        worst = int(np.argmax(spread))
        raise FoldSplitError(f"class {classes[worst]} is spread {per_class[:, worst].tolist()} over the folds")


def train_eval_split(folds: Sequence[Sequence[str]], fold: int) -> Tuple[List[str], List[str]]:
    """Fold ``fold`` is held out; the others form the training ids."""
    if not 0 <= fold < len(folds):
        raise FoldSplitError(f"fold {fold} does not exist; there are {len(folds)} folds")
    train_ids = [i for k, members in enumerate(folds) if k != fold for i in members]
    return train_ids, list(folds[fold])


def check_no_leakage(train_ids: Sequence[str], eval_ids: Sequence[str]) -> None:
    overlap = set(train_ids) & set(eval_ids)
    if overlap:
        raise FoldLeakageError(
            f"{len(overlap)} clips are in both train and eval sets, e.g. {sorted(overlap)[:3]}")


def check_partition(folds: Sequence[Sequence[str]], ids: Sequence[str]) -> None:
    """Folds must be pairwise disjoint and cover ``ids`` exactly."""
    seen = set()
    for members in folds:
        check_no_leakage(train_ids=list(seen), eval_ids=members)
        seen.update(members)
    if seen != set(ids):
        missing = sorted(set(ids) - seen)[:3]
        unknown = sorted(seen - set(ids))[:3]
        raise FoldSplitError(f"folds do not cover the dataset: missing {missing}, unknown {unknown}")


def save_folds(folds: Sequence[Sequence[str]], path: str) -> None:
    with open(path, "w", encoding="utf8") as f:
        json.dump([list(members) for members in folds], f, indent=1)


def load_folds(path: str) -> List[List[str]]:
    with open(path, "r", encoding="utf8") as f:
        folds = json.load(f)
    if not isinstance(folds, list) or not all(isinstance(m, list) for m in folds):
        raise FoldSplitError(f"`{path}` must hold a JSON list of id lists")
    return folds


def save_train_ids(ids: Sequence[str], path: str) -> None:
    with open(path, "w", encoding="utf8") as f:
        json.dump(list(ids), f, indent=1)


def load_train_ids(path: str) -> List[str]:
    """Clip ids a snapshot was fitted on, as written next to it by the trainer.

    Raises:
        DataError: if the file is missing or is not a JSON list of ids.
    """
    if not os.path.isfile(path):
        raise DataError(f"no training ids at `{path}`; cannot check the snapshot against held-out clips")
    with open(path, "r", encoding="utf8") as f:
        ids = json.load(f)
    if not isinstance(ids, list) or not all(isinstance(i, str) for i in ids):
        raise DataError(f"`{path}` must hold a JSON list of clip ids")
    return ids
