"""Minimal dense-tensor engine: the layer set the models need, each with a
hand-written backward pass, plus Adam, learning-rate schedules and
bit-exact checkpoints."""

from .layers import (
    BatchNorm2d, Conv2d, Flatten, Linear, Module, ReLU, ResidualBlock, Sequential, Sigmoid, Softmax, Tanh,
)
from .losses import mse_loss, softmax_cross_entropy
from .optim import Adam, AdamState, LrSchedule, MAIA_SCHEDULE, adam_step, schedule_rate
from .checkpoint import Checkpoint, load_checkpoint, read_checkpoint, register_model, save_checkpoint

__all__ = [
    "BatchNorm2d", "Conv2d", "Flatten", "Linear", "Module", "ReLU", "ResidualBlock", "Sequential", "Sigmoid",
    "Softmax", "Tanh", "mse_loss", "softmax_cross_entropy", "Adam", "AdamState", "LrSchedule", "MAIA_SCHEDULE",
    "adam_step", "schedule_rate", "Checkpoint", "load_checkpoint", "read_checkpoint", "register_model",
    "save_checkpoint",
]
