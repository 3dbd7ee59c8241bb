from .model import (
    HISTORY_HEADER,
    EpochRecord,
    LossError,
    ToyClassifier,
    TrainConfig,
    TrainingAbortedError,
    TrainingDataError,
    accuracy,
    forward,
    init_classifier,
    loss_and_gradients,
    mixed_batch_step,
    model_from_payload,
    model_payload,
    suppression_loss,
    train,
)
from .toy import ToyConfig, ToyDataset, make_toy_dataset

__all__ = [
    "HISTORY_HEADER",
    "EpochRecord",
    "LossError",
    "ToyClassifier",
    "ToyConfig",
    "ToyDataset",
    "TrainConfig",
    "TrainingAbortedError",
    "TrainingDataError",
    "accuracy",
    "forward",
    "init_classifier",
    "loss_and_gradients",
    "make_toy_dataset",
    "mixed_batch_step",
    "model_from_payload",
    "model_payload",
    "suppression_loss",
    "train",
]
