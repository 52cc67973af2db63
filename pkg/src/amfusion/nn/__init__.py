"""Network definition: parameters, forward blocks and weight files."""

from src.amfusion.nn.blocks import (
    autoencode,
    channel_attention,
    decoder_forward,
    encoder_forward,
    fuse_forward,
    mkblock_forward,
    pscnet_forward,
    spatial_attention,
)
from src.amfusion.nn.params import ArchConfig, ModelParams, channel_trace, init_params, param_shapes
from src.amfusion.nn.weights import load_weights, save_weights

__all__ = [
    "ArchConfig",
    "ModelParams",
    "autoencode",
    "channel_attention",
    "channel_trace",
    "decoder_forward",
    "encoder_forward",
    "fuse_forward",
    "init_params",
    "load_weights",
    "mkblock_forward",
    "param_shapes",
    "pscnet_forward",
    "save_weights",
    "spatial_attention",
]
