from .checkpoint import CKPT_SCHEMA, CheckpointError, load_checkpoint, save_checkpoint
from .model import (
    GnnConfig,
    GnnParams,
    OutputMode,
    ShapeError,
    Task,
    audit,
    forward,
    forward_batch,
    gradient,
    init_params,
    loss,
    loss_and_grad,
    param_shapes,
    predict,
)
from .train import LabelError, TrainConfig, evaluate, one_cycle_lr, train

__all__ = [
    "CKPT_SCHEMA", "CheckpointError", "GnnConfig", "GnnParams", "LabelError", "OutputMode",
    "ShapeError", "Task", "TrainConfig", "audit", "evaluate", "forward", "forward_batch",
    "gradient", "init_params", "load_checkpoint", "loss", "loss_and_grad", "one_cycle_lr",
    "param_shapes", "predict", "save_checkpoint", "train",
]
