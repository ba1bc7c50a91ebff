"""Multi-modality image fusion at desk scale.

A numpy implementation of a dual-branch transformer fusion network with
semantic channel pruning, global affine modulation and text-guided
channel perturbation, trained with gradient + L1 losses, plus the five
standard fusion quality metrics. Built on a small reverse-mode autodiff
core so every gradient is checkable against finite differences.
"""

from . import autodiff, blocks, checks, imageio, metrics, modulation, perturbation, providers, pruning, training
from .autodiff import ParamStore, Tape, Tensor, backward, constant, grad_check
from .model import EncoderState, FusionConfig, FusionModel, build_model
from .training import Adam, TrainSchedule, cosine_lr, grad_loss, l1_loss, total_loss, train

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "EncoderState",
    "FusionConfig",
    "FusionModel",
    "ParamStore",
    "Tape",
    "Tensor",
    "TrainSchedule",
    "backward",
    "build_model",
    "constant",
    "cosine_lr",
    "grad_check",
    "grad_loss",
    "l1_loss",
    "total_loss",
    "train",
]
