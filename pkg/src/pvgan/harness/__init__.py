"""Training harness: configuration, synthetic data, optimizer, checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, TrainConfig, load_config, parse_config
from .data import SyntheticDataset, sample_dataset
from .optim import AdamHyper, AdamState, adam_step
from .train import Trainer, TrainingAborted, train

__all__ = [
    "AdamHyper", "AdamState", "ConfigError", "SyntheticDataset", "TrainConfig", "Trainer",
    "TrainingAborted", "adam_step", "load_checkpoint", "load_config", "parse_config",
    "sample_dataset", "save_checkpoint", "train",
]
