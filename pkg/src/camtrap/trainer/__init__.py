"""Training loops, transfer-learning modes, and checkpoints."""
from .checkpoint import (
    MAGIC,
    VERSION,
    Checkpoint,
    CheckpointError,
    checkpoint_bytes,
    load_checkpoint,
    parse_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from .finetune import FineTuneState, progressive_finetune
from .loop import TrainConfig, feature_extraction_fit, history_text, lr_at, shuffle_seed, train

__all__ = [
    "MAGIC",
    "VERSION",
    "Checkpoint",
    "CheckpointError",
    "FineTuneState",
    "TrainConfig",
    "checkpoint_bytes",
    "feature_extraction_fit",
    "history_text",
    "load_checkpoint",
    "lr_at",
    "parse_checkpoint",
    "progressive_finetune",
    "read_checkpoint",
    "save_checkpoint",
    "shuffle_seed",
    "train",
]
