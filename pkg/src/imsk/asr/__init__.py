"""Recognizer model and training loop."""

from . import model, training
from .model import (
    ATTENTION_LARGE,
    DECODER_LARGE,
    ENCODER_LARGE,
    AsrModel,
    AttentionConfig,
    DecoderConfig,
    EncoderConfig,
    HybridLossConfig,
    encoder_output_length,
    load_asr,
    save_asr,
)
from .training import AsrTrainConfig, EpochStats, TrainResult, make_batches, train_asr
