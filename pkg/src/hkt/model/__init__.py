from .checkpoint import CheckpointError, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .config import ModelConfig
from .layers import (
    Downsampler, EncoderBlock, HierarchicalAttention, Module, causal_mask, downsample_cascade,
    dynamic_fusion, fuse_scores, hybrid_head_forward, level_scores, upsample_index,
)
from .model import HktModel

__all__ = [
    "ModelConfig", "HktModel", "Module", "Downsampler", "EncoderBlock", "HierarchicalAttention",
    "downsample_cascade", "level_scores", "fuse_scores", "hybrid_head_forward", "dynamic_fusion",
    "causal_mask", "upsample_index", "save_checkpoint", "load_checkpoint", "encode_checkpoint",
    "decode_checkpoint", "CheckpointError",
]
