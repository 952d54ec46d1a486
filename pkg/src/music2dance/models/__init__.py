from .base import POSE_DIM, PoseHead, SequenceModel, WindowBatch
from .checkpoint import ModelCheckpoint, build_model, load_checkpoint, save_checkpoint
from .ssm import (
    MambaConfig,
    MambaTranslator,
    kernel_convolution,
    scan_recurrent,
    selective_scan,
    ssm_kernel,
    zoh_discretize,
)
from .transformer import (
    TransformerConfig,
    TransformerTranslator,
    additive_mask,
    attention,
    make_causal_mask,
    make_padding_mask,
)

__all__ = [
    "POSE_DIM",
    "MambaConfig",
    "MambaTranslator",
    "ModelCheckpoint",
    "PoseHead",
    "SequenceModel",
    "TransformerConfig",
    "TransformerTranslator",
    "WindowBatch",
    "additive_mask",
    "attention",
    "build_model",
    "kernel_convolution",
    "load_checkpoint",
    "make_causal_mask",
    "make_padding_mask",
    "save_checkpoint",
    "scan_recurrent",
    "selective_scan",
    "ssm_kernel",
    "zoh_discretize",
]
