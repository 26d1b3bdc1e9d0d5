"""Training loops, inference, cross-validation and the downsampled-input harness."""

from .config import DEFAULT_LR, VARIANTS, TrainConfig, derive_seed, desk_config, full_config
from .crossval import FoldPlan, cross_validate, fold_config, make_fold_plan, parse_plan_spec
from .inference import downsample_eval, evaluate_model, infer_volume, load_checkpoint, save_checkpoint
from .loops import (
    TrainLog,
    build_critic_for,
    build_generator,
    build_perceptual_for,
    epoch_batches,
    sample_training_batch,
    sampling_rng,
    steps_per_epoch,
    train,
    train_gan,
    train_supervised,
)

__all__ = [
    "DEFAULT_LR",
    "FoldPlan",
    "TrainConfig",
    "TrainLog",
    "VARIANTS",
    "build_critic_for",
    "build_generator",
    "build_perceptual_for",
    "cross_validate",
    "derive_seed",
    "desk_config",
    "downsample_eval",
    "epoch_batches",
    "evaluate_model",
    "fold_config",
    "infer_volume",
    "load_checkpoint",
    "make_fold_plan",
    "full_config",
    "parse_plan_spec",
    "sample_training_batch",
    "sampling_rng",
    "save_checkpoint",
    "steps_per_epoch",
    "train",
    "train_gan",
    "train_supervised",
]
