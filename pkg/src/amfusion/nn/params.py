"""
Architecture configuration and the named parameter set of the autoencoder.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from src.amfusion.errors import ConfigError
from src.amfusion.ops import BatchNormState
from src.amfusion.tensor import Tensor
from src.utils.math_utils import kaiming_uniform_bound

logger = logging.getLogger(__name__)

BRANCH_KERNELS = (3, 5, 7)
PRELU_INIT = 0.25
DECODER_LAYERS = 5
RUNNING_STAT_SUFFIXES = (".running_mean", ".running_var")


@dataclass(frozen=True)
class ArchConfig:
    base_channels: int = 4
    ca_reduction: int = 4
    image_side: int = 64
    use_attention: bool = True

    def __post_init__(self):
        c0, r = self.base_channels, self.ca_reduction
        if c0 < 2:
            raise ConfigError(f"base_channels must be >= 2, got {c0}")
        if r < 1 or (24 * c0) % r:
            raise ConfigError(f"24 * base_channels ({24 * c0}) must be divisible by ca_reduction ({r})")
        if self.image_side < 1:
            raise ConfigError(f"image_side must be positive, got {self.image_side}")

    @property
    def encoder_channels(self) -> int:
        """Channels of the final MKBlock / PSCNet output (24 c0)."""
        return 24 * self.base_channels

    @property
    def feature_channels(self) -> int:
        """Channels handed to the decoder and the fusion layer (48 c0)."""
        return 48 * self.base_channels

    def mkblock_in(self, block_index: int) -> int:
        return (1, 6, 12)[block_index - 1] * self.base_channels

    def mkblock_branch(self, block_index: int) -> int:
        return (2, 4, 8)[block_index - 1] * self.base_channels

    def decoder_plan(self) -> List[Tuple[int, int]]:
        c0 = self.base_channels
        widths = [48 * c0, 24 * c0, 12 * c0, 6 * c0, 3 * c0, 1]
        return list(zip(widths[:-1], widths[1:]))


def channel_trace(config: ArchConfig) -> Dict[str, Tuple[int, int]]:
    """Per-layer (input channels, output channels) plan of the network."""
    c0 = config.base_channels
    trace = OrderedDict()
    trace["enc.conv0"] = (1, c0)
    for k in (1, 2, 3):
        for ks in BRANCH_KERNELS:
            trace[f"mk{k}.conv{ks}"] = (config.mkblock_in(k), config.mkblock_branch(k))
        trace[f"mk{k}"] = (config.mkblock_in(k), 3 * config.mkblock_branch(k))
    trace["psc"] = (config.encoder_channels, config.encoder_channels)
    trace["res.conv"] = (config.encoder_channels, config.encoder_channels)
    for i, plan in enumerate(config.decoder_plan(), start=1):
        trace[f"dec{i}.conv"] = plan
    return trace


def param_shapes(config: ArchConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    """Ordered name -> shape map; every shape is a pure function of the config."""
    shapes = OrderedDict()
    c0 = config.base_channels
    shapes["enc.conv0.w"] = (c0, 1, 3, 3)
    shapes["enc.conv0.b"] = (c0,)
    for k in (1, 2, 3):
        cin, width = config.mkblock_in(k), config.mkblock_branch(k)
        for ks in BRANCH_KERNELS:
            shapes[f"mk{k}.conv{ks}.w"] = (width, cin, ks, ks)
            shapes[f"mk{k}.conv{ks}.b"] = (width,)
            shapes[f"mk{k}.prelu{ks}"] = (1,)
    c = config.encoder_channels
    hidden = c // config.ca_reduction
    shapes["psc.sa.w"] = (1, 2, 3, 3)
    shapes["psc.sa.b"] = (1,)
    shapes["psc.ca.fc1.w"] = (hidden, c, 1, 1)
    shapes["psc.ca.fc1.b"] = (hidden,)
    shapes["psc.ca.fc2.w"] = (c, hidden, 1, 1)
    shapes["psc.ca.fc2.b"] = (c,)
    shapes["res.conv.w"] = (c, c, 3, 3)
    shapes["res.conv.b"] = (c,)
    for i, (cin, cout) in enumerate(config.decoder_plan(), start=1):
        shapes[f"dec{i}.conv.w"] = (cout, cin, 3, 3)
        shapes[f"dec{i}.conv.b"] = (cout,)
        if i < DECODER_LAYERS:
            shapes[f"dec{i}.bn.gamma"] = (cout,)
            shapes[f"dec{i}.bn.beta"] = (cout,)
            shapes[f"dec{i}.bn.running_mean"] = (cout,)
            shapes[f"dec{i}.bn.running_var"] = (cout,)
            shapes[f"dec{i}.prelu"] = (1,)
    return shapes


class ModelParams:
    """Ordered name -> Tensor map plus the ArchConfig that shaped it."""

    def __init__(self, config: ArchConfig, tensors: "OrderedDict[str, Tensor]"):
        expected = param_shapes(config)
        if list(tensors) != list(expected):
            missing = sorted(set(expected) - set(tensors))
            extra = sorted(set(tensors) - set(expected))
            raise ConfigError(f"parameter names do not match the architecture (missing={missing}, extra={extra})")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ConfigError(f"parameter {name} has shape {tensors[name].shape}, expected {shape}")
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def trainable_names(self) -> List[str]:
        return [n for n in self.tensors if not n.endswith(RUNNING_STAT_SUFFIXES)]

    def bn_state(self, layer: str) -> BatchNormState:
        return BatchNormState(
            self.tensors[f"{layer}.running_mean"].data,
            self.tensors[f"{layer}.running_var"].data,
        )

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def cast(self, dtype) -> "ModelParams":
        trainable = set(self.trainable_names())
        cast = OrderedDict(
            (name, Tensor(t.data, requires_grad=name in trainable, dtype=dtype, name=name))
            for name, t in self.tensors.items()
        )
        return ModelParams(self.config, cast)

    def copy(self) -> "ModelParams":
        return self.cast(self.tensors["enc.conv0.w"].dtype)

    def equals(self, other: "ModelParams") -> bool:
        """Bitwise equality of the stored architecture, names and values (the training side is not compared)."""
        mine = (self.config.base_channels, self.config.ca_reduction, self.config.use_attention)
        theirs = (other.config.base_channels, other.config.ca_reduction, other.config.use_attention)
        if mine != theirs or list(self.tensors) != list(other.tensors):
            return False
        return all(
            a.data.dtype == b.data.dtype and np.array_equal(a.data, b.data)
            for a, b in zip(self.tensors.values(), other.tensors.values())
        )


def init_params(config: ArchConfig, seed: int) -> ModelParams:
    """
    Deterministic initialization from a 64-bit seed.

    Conv weights are Kaiming-uniform over their fan-in, biases zero, PReLU
    slopes 0.25, BN gamma 1 / beta 0 with running mean 0 and variance 1.
    Draws come from numpy's PCG64 generator in parameter order.
    """
    rng = np.random.Generator(np.random.PCG64(seed & 0xFFFFFFFFFFFFFFFF))
    tensors = OrderedDict()
    for name, shape in param_shapes(config).items():
        if name.endswith(".w"):
            fan_in = int(np.prod(shape[1:]))
            bound = kaiming_uniform_bound(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".gamma") or name.endswith(".running_var"):
            data = np.ones(shape)
        elif ".prelu" in name:
            data = np.full(shape, PRELU_INIT)
        else:
            data = np.zeros(shape)
        trainable = not name.endswith(RUNNING_STAT_SUFFIXES)
        tensors[name] = Tensor(data, requires_grad=trainable, name=name)
    logger.debug("init_params seed=%d tensors=%d", seed, len(tensors))
    return ModelParams(config, tensors)
