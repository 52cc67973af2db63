"""
Forward passes of the multi-kernel attention autoencoder.

Every block is a plain function of (input, ModelParams); the network state
lives entirely in the parameter map. ``mode`` selects batch-norm behaviour
("train" uses batch statistics and updates running stats, "eval" uses the
running stats).
"""

import logging
from typing import Optional

from src.amfusion import ops
from src.amfusion.errors import ConfigError, ShapeError
from src.amfusion.fusion import FusionStrategy
from src.amfusion.nn.params import BRANCH_KERNELS, DECODER_LAYERS, ModelParams
from src.amfusion.tensor import Tensor

logger = logging.getLogger(__name__)


def encoder_stem(img: Tensor, params: ModelParams) -> Tensor:
    """Initial 3x3 conv + ReLU (1 -> c0)."""
    if img.ndim != 4 or img.shape[1] != 1:
        raise ShapeError(f"encoder expects B x 1 x H x W images, got {img.shape}")
    return ops.relu(ops.conv2d(img, params["enc.conv0.w"], params["enc.conv0.b"], padding=1))


def mkblock_forward(x: Tensor, params: ModelParams, block_index: int) -> Tensor:
    """
    Multi-kernel block: parallel 3x3 / 5x5 / 7x7 same-padded convs, each
    followed by its own PReLU, concatenated along channels.

    Raises:
        ConfigError: If block_index is not 1..3 or x has the wrong channel count
    """
    if block_index not in (1, 2, 3):
        raise ConfigError(f"MKBlock index must be 1, 2 or 3, got {block_index}")
    expected = params.config.mkblock_in(block_index)
    if x.ndim != 4 or x.shape[1] != expected:
        raise ConfigError(f"MKBlock {block_index} expects {expected} input channels, got shape {x.shape}")
    prefix = f"mk{block_index}"
    branches = []
    for ks in BRANCH_KERNELS:
        y = ops.conv2d(x, params[f"{prefix}.conv{ks}.w"], params[f"{prefix}.conv{ks}.b"], padding=ks // 2)
        branches.append(ops.prelu(y, params[f"{prefix}.prelu{ks}"]))
    return ops.concat_channels(branches)


def spatial_attention(x: Tensor, params: ModelParams) -> Tensor:
    """Per-pixel gate in (0, 1): sigmoid(conv3x3([max_c(x), mean_c(x)]))."""
    pooled = ops.concat_channels([ops.max_pool_spatial(x), ops.avg_pool_spatial(x)])
    return ops.sigmoid(ops.conv2d(pooled, params["psc.sa.w"], params["psc.sa.b"], padding=1))


def _bottleneck(v: Tensor, params: ModelParams) -> Tensor:
    hidden = ops.relu(ops.conv2d(v, params["psc.ca.fc1.w"], params["psc.ca.fc1.b"]))
    return ops.conv2d(hidden, params["psc.ca.fc2.w"], params["psc.ca.fc2.b"])


def channel_attention(x: Tensor, params: ModelParams) -> Tensor:
    """Per-channel gate in (0, 1) from the shared bottleneck over global max and mean pools."""
    r = params.config.ca_reduction
    if x.shape[1] % r:
        raise ConfigError(f"channel count {x.shape[1]} is not divisible by reduction {r}")
    return ops.sigmoid(ops.add(_bottleneck(ops.global_max_pool(x), params), _bottleneck(ops.global_avg_pool(x), params)))


def pscnet_forward(x: Tensor, params: ModelParams, ca: Optional[Tensor] = None, sa: Optional[Tensor] = None) -> Tensor:
    """
    Parallel spatial-channel attention: both gates see the same input and the
    two attended maps are averaged.

    Args:
        x: Final MKBlock output, B x 24c0 x H x W
        params: Model parameters
        ca: Optional precomputed channel gate (B x C x 1 x 1)
        sa: Optional precomputed spatial gate (B x 1 x H x W)

    Returns:
        0.5 * (x * ca + x * sa), or x unchanged when attention is disabled
    """
    if not params.config.use_attention:
        return x
    ca = channel_attention(x, params) if ca is None else ca
    sa = spatial_attention(x, params) if sa is None else sa
    return ops.mul(ops.add(ops.mul(x, ca), ops.mul(x, sa)), 0.5)


def encoder_forward(img: Tensor, params: ModelParams) -> Tensor:
    """Image B x 1 x H x W -> features B x 48c0 x H x W."""
    h = encoder_stem(img, params)
    for k in (1, 2, 3):
        h = mkblock_forward(h, params, k)
    attended = pscnet_forward(h, params)
    residual = ops.conv2d(h, params["res.conv.w"], params["res.conv.b"], padding=1)
    return ops.concat_channels([residual, attended])


def decoder_forward(f: Tensor, params: ModelParams, mode: str = "eval") -> Tensor:
    """Four conv + BN + PReLU layers, then conv + tanh down to one channel."""
    expected = params.config.feature_channels
    if f.ndim != 4 or f.shape[1] != expected:
        raise ShapeError(f"decoder expects {expected} input channels, got shape {f.shape}")
    h = f
    for i in range(1, DECODER_LAYERS):
        layer = f"dec{i}"
        h = ops.conv2d(h, params[f"{layer}.conv.w"], params[f"{layer}.conv.b"], padding=1)
        h = ops.batch_norm(h, params[f"{layer}.bn.gamma"], params[f"{layer}.bn.beta"],
                           params.bn_state(f"{layer}.bn"), mode=mode)
        h = ops.prelu(h, params[f"{layer}.prelu"])
    last = f"dec{DECODER_LAYERS}"
    return ops.tanh(ops.conv2d(h, params[f"{last}.conv.w"], params[f"{last}.conv.b"], padding=1))


def autoencode(img: Tensor, params: ModelParams, mode: str = "eval") -> Tensor:
    """Reconstruction path used for training: decoder(encoder(img))."""
    return decoder_forward(encoder_forward(img, params), params, mode=mode)


def fuse_forward(ir: Tensor, vis: Tensor, params: ModelParams, strategy: FusionStrategy) -> Tensor:
    """
    Inference path: decoder(strategy(encoder(ir), encoder(vis))) in eval mode.

    Raises:
        ShapeError: If ir and vis differ in shape
    """
    if ir.shape != vis.shape:
        raise ShapeError(f"IR and VIS inputs differ in shape: {ir.shape} vs {vis.shape}")
    fused = strategy(encoder_forward(ir, params), encoder_forward(vis, params))
    logger.debug("fuse_forward strategy=%s shape=%s", strategy.cli_name, ir.shape)
    return decoder_forward(fused, params, mode="eval")
