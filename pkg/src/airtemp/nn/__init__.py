"""Minimal dense/convolutional network substrate with Adam."""
from .functional import (ATTN_WIDTH, conv1x1_forward, conv2d_forward, dense_forward, relu_forward,
                         self_attention_forward)
from .layers import (Conv1x1, Conv3x3, Dense, Layer, ReLU, ResidualBlock, SelfAttention, Sequential,
                     backward, clear_cache)
from .losses import l1_loss, masked_l1
from .params import ParamStore, adam_step, glorot_uniform

__all__ = [
    "ATTN_WIDTH", "Conv1x1", "Conv3x3", "Dense", "Layer", "ParamStore", "ReLU", "ResidualBlock",
    "SelfAttention", "Sequential", "adam_step", "backward", "clear_cache", "conv1x1_forward", "conv2d_forward",
    "dense_forward", "glorot_uniform", "l1_loss", "masked_l1", "relu_forward", "self_attention_forward",
]
