"""Toy dense-network trainer replaying pipeline schedules."""

from .checkpoint import (
    checkpoint_path,
    checkpoint_stage,
    find_resume_epoch,
    restore_all,
    restore_stage,
    save_all,
)
from .loop import (
    SEQUENTIAL,
    TRAIN_MODES,
    EpochLog,
    MicroForwardRecord,
    TrainConfig,
    epoch_data,
    replay_epoch,
    separable_task,
    train,
    train_epoch_pipedream_semantics,
    train_epoch_sequential,
    train_epoch_timeprest,
)
from .network import (
    ACTIVATIONS,
    LOSSES,
    LayerSpec,
    StageModel,
    gradient_check,
    network_loss_and_grads,
    partition_layers,
    partition_model,
)
