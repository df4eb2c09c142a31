"""Classification losses.

Training always goes through ``cross_entropy`` on logits (fused
log-sum-exp). ``probability_cross_entropy`` evaluates -log p[y] on an
already normalised probability vector, for reporting.
"""
from typing import Sequence, Union

import numpy as np

from claip_emo.errors import LabelError
from claip_emo.numerics import ops
from claip_emo.numerics.tensor import Tensor


def cross_entropy(logits: Tensor, labels: Union[np.ndarray, Sequence[int]]) -> Tensor:
    """Mean -log softmax(logits)[y] over the batch."""
    return ops.cross_entropy(logits, labels)


def probability_cross_entropy(probs: np.ndarray, label: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[-1]:
        raise LabelError(f"label {label} is outside [0, {probs.shape[-1]})")
    return float(-np.log(probs[label]))
