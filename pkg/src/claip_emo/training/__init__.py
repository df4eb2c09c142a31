from claip_emo.training.losses import cross_entropy
from claip_emo.training.optim import Adam, OptimizerState, adam_step
from claip_emo.training.schedule import CosineWarmupSchedule, lr_at
from claip_emo.training.trainer import TrainResult, train
