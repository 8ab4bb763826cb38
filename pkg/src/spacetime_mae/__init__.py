"""Spacetime masked autoencoders on a numpy autodiff core."""

from .masking import MaskPlan, MaskSchedule, ratio_at, sample_mask
from .model import MaeConfig, MaeModel, forward_pretrain
from .perf import mae_flops, vit_flops
from .tokenizer import PatchSpec
from .trainer import RunConfig, finetune, pretrain

__version__ = "0.1.0"

__all__ = [
    "MaeConfig",
    "MaeModel",
    "MaskPlan",
    "MaskSchedule",
    "PatchSpec",
    "RunConfig",
    "finetune",
    "forward_pretrain",
    "mae_flops",
    "pretrain",
    "ratio_at",
    "sample_mask",
    "vit_flops",
]
