"""Central finite-difference checks of tape gradients."""
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from claip_emo.logger import get_logger
from claip_emo.numerics.tensor import Tape, Tensor

logger = get_logger(__name__)

REL_ERROR_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_ERROR_FLOOR) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


@dataclass
class GradCheckReport:
    errors: Dict[str, float] = field(default_factory=dict)
    checked_entries: int = 0

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def worst(self) -> Tuple[str, float]:
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]

    def passed(self, tolerance: float) -> bool:
        return self.max_error < tolerance


def numerical_gradient(loss_fn: Callable[[], Tensor], param: Tensor, index: Tuple[int, ...],
                       h: float = 1e-5) -> float:
    original = param.data[index]
    param.data[index] = original + h
    plus = float(loss_fn().data)
    param.data[index] = original - h
    minus = float(loss_fn().data)
    param.data[index] = original
    return (plus - minus) / (2.0 * h)


def check_gradients(loss_fn: Callable[[], Tensor], named_params: Sequence[Tuple[str, Tensor]],
                    h: float = 1e-5, max_entries: Optional[int] = 6, seed: int = 0) -> GradCheckReport:
    """Compares reverse-mode gradients with central differences.

    ``loss_fn`` must be deterministic (eval mode, no dropout). Up to
    ``max_entries`` entries per tensor are checked, chosen with ``seed``;
    None checks every entry.

    Returns:
        a GradCheckReport holding the max relative error per tensor name.
    """
    for _, param in named_params:
        param.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = {name: (param.grad.copy() if param.grad is not None else np.zeros_like(param.data))
                for name, param in named_params}

    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name, param in named_params:
        flat_count = param.size
        if max_entries is None or flat_count <= max_entries:
            picks = np.arange(flat_count)
        else:
            picks = rng.choice(flat_count, size=max_entries, replace=False)
        worst = 0.0
        for flat in picks:
            index = np.unravel_index(int(flat), param.shape)
            numeric = numerical_gradient(loss_fn=loss_fn, param=param, index=index, h=h)
            error = float(relative_error(np.asarray(analytic[name][index]), np.asarray(numeric)))
            worst = max(worst, error)
            report.checked_entries += 1
        report.errors[name] = worst
    for _, param in named_params:
        param.grad = None
    if report.errors:
        name, error = report.worst()
        logger.info(f"gradient check: {len(report.errors)} tensors, {report.checked_entries} entries, "
                    f"max relative error {error:.3e} at `{name}`")
    return report
