"""The miniature detector: model assembly, loss, decoding, training, cost accounting."""
from .flops import ModelCost, count_flops, count_params_flops
from .infer import decode, predict
from .loss import Assignment, LossTerms, assign, compute_loss
from .model import STRIDES, Detector, HeadOutput, ModelConfig, build_model, forward
from .train import (HISTORY_COLUMNS, SGD, EpochRecord, Sample, TrainConfig, TrainResult, read_history,
                    stack_batch, train, validate, write_history)

__all__ = [
    "ModelConfig", "Detector", "HeadOutput", "build_model", "forward", "STRIDES",
    "assign", "Assignment", "compute_loss", "LossTerms",
    "decode", "predict",
    "train", "validate", "TrainConfig", "TrainResult", "EpochRecord", "Sample", "SGD",
    "stack_batch", "write_history", "read_history", "HISTORY_COLUMNS",
    "count_params_flops", "count_flops", "ModelCost",
]
