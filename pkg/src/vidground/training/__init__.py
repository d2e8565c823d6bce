from .labels import LabelAssignment, assign_labels, decode_targets, positive_steps, select_level
from .loop import (
    LOG_COLUMNS,
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    batch_loss,
    epoch_losses,
    train,
)
from .losses import LossTerms, diou_loss_1d, focal_loss, grounding_loss
from .optim import EMA, AdamW, clip_grad_norm, warmup_cosine

__all__ = [
    "EMA",
    "LOG_COLUMNS",
    "AdamW",
    "LabelAssignment",
    "LossTerms",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "assign_labels",
    "batch_loss",
    "clip_grad_norm",
    "decode_targets",
    "diou_loss_1d",
    "epoch_losses",
    "focal_loss",
    "grounding_loss",
    "positive_steps",
    "select_level",
    "train",
    "warmup_cosine",
]
