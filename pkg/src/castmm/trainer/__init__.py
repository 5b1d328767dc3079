"""Masking, scheduling, pretraining, finetuning and evaluation."""

from castmm.trainer.config import DESK_MODEL, ConfigError, TrainConfig
from castmm.trainer.data import DataBundle, Standardizer, batch_stream, prepare_data, stream_rng
from castmm.trainer.loop import (
    EvalResult,
    TrainResult,
    evaluate,
    finetune,
    load_trained,
    masked_accuracy,
    predict,
    pretrain_contrastive,
    pretrain_mnp,
)
from castmm.trainer.runlog import RunLog, TrainingError
from castmm.trainer.schedule import lr_at, sample_mask
