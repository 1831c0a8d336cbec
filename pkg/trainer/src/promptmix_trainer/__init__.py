"""Compact-encoder distillation endpoint for promptmix-emitted datasets."""

from .data import label_space, load_labeled_file
from .train import EvalResult, TrainConfig, TrainResult, evaluate, file_digest, train

__version__ = "0.1.0"
