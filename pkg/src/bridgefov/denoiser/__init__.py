from .network import (
    ArchDescriptor,
    DenoiserParams,
    backward,
    expected_param_count,
    forward,
    init_params,
    loss_and_grad,
    param_spec,
    zero_grads,
)
from .adam import AdamState, optimizer_step
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .training import TrainConfig, TrainResult, accumulate_loss_and_grad, train

__all__ = [
    "ArchDescriptor", "DenoiserParams", "AdamState", "TrainConfig", "TrainResult",
    "CheckpointError", "accumulate_loss_and_grad", "backward", "expected_param_count",
    "forward", "init_params", "load_checkpoint", "loss_and_grad", "optimizer_step",
    "param_spec", "save_checkpoint", "train", "zero_grads",
]
