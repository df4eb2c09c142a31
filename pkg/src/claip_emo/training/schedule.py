"""Linear warmup followed by cosine decay, evaluated per optimizer step."""
import math
from dataclasses import dataclass


@dataclass(frozen=True)
class CosineWarmupSchedule:
    lr_peak: float
    lr_min: float
    warmup_steps: int
    total_steps: int

    @classmethod
    def from_settings(cls, train, steps_per_epoch: int) -> "CosineWarmupSchedule":
        """Builds the step schedule for a TrainSettings section."""
        return cls(lr_peak=train.lr_peak, lr_min=train.lr_min,
                   warmup_steps=train.resolved_warmup_epochs * steps_per_epoch,
                   total_steps=train.epochs * steps_per_epoch)


def lr_at(step: int, schedule: CosineWarmupSchedule) -> float:
    """Learning rate at ``step`` in [0, total_steps].

    Ramps linearly from 0 to lr_peak over the warmup steps, then follows
    lr_min + (lr_peak - lr_min) * (1 + cos(pi * progress)) / 2.
    """
    if schedule.warmup_steps > 0 and step < schedule.warmup_steps:
        return schedule.lr_peak * step / schedule.warmup_steps
    decay_steps = schedule.total_steps - schedule.warmup_steps
    if decay_steps <= 0:
        return schedule.lr_peak
    progress = min(1.0, max(0.0, (step - schedule.warmup_steps) / decay_steps))
    return schedule.lr_min + 0.5 * (schedule.lr_peak - schedule.lr_min) * (1.0 + math.cos(math.pi * progress))
