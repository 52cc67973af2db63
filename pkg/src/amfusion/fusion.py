"""
Test-time fusion rules for the two sources' encoder feature maps.

All three rules are convex combinations of their inputs, symmetric in the two
sources and idempotent on equal inputs. Weights are computed in float64 and
the result is returned in the inputs' dtype without taping.
"""

import enum
import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from src.amfusion.errors import ConfigError, ShapeError
from src.amfusion.tensor import Tensor

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-12
MEAN_FILTER_SIZE = 3


class FusionKind(enum.Enum):
    WEIGHTED_AVERAGE = "avg"
    L1_NORM = "l1"
    MEAN_FILTER = "mean"


@dataclass(frozen=True)
class FusionStrategy:
    kind: FusionKind = FusionKind.L1_NORM
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError(f"fusion epsilon must be positive, got {self.epsilon}")

    @property
    def cli_name(self) -> str:
        return self.kind.value

    def __call__(self, f1: Tensor, f2: Tensor) -> Tensor:
        if self.kind is FusionKind.WEIGHTED_AVERAGE:
            return fuse_weighted_average(f1, f2)
        if self.kind is FusionKind.L1_NORM:
            return fuse_l1norm(f1, f2, self.epsilon)
        return fuse_meanfilter(f1, f2, self.epsilon)


def parse_strategy(name: str) -> FusionStrategy:
    """
    Map a CLI name (avg, l1, mean) to a strategy.

    Raises:
        ConfigError: If the name is unknown
    """
    try:
        return FusionStrategy(FusionKind(name.strip().lower()))
    except ValueError:
        choices = ", ".join(k.value for k in FusionKind)
        raise ConfigError(f"unknown fusion strategy {name!r} (choose from {choices})") from None


def _check_pair(f1: Tensor, f2: Tensor):
    if f1.shape != f2.shape:
        raise ShapeError(f"feature maps differ in shape: {f1.shape} vs {f2.shape}")
    if f1.ndim != 4:
        raise ShapeError(f"feature maps must be B x C x H x W, got {f1.shape}")


def fuse_weighted_average(f1: Tensor, f2: Tensor) -> Tensor:
    _check_pair(f1, f2)
    out = (f1.data.astype(np.float64) + f2.data) / 2.0
    return Tensor(out, dtype=f1.dtype)


def l1norm_weights(f1: Tensor, f2: Tensor, epsilon: float = DEFAULT_EPSILON):
    """Per-source scalar weights from the L1 mass of each whole feature stack."""
    _check_pair(f1, f2)
    s1 = float(np.sum(np.abs(f1.data), dtype=np.float64))
    s2 = float(np.sum(np.abs(f2.data), dtype=np.float64))
    total = s1 + s2
    if total < epsilon:
        logger.warning("l1norm fusion: both feature stacks are zero, using equal weights")
        return 0.5, 0.5
    w1 = s1 / total
    return w1, 1.0 - w1


def fuse_l1norm(f1: Tensor, f2: Tensor, epsilon: float = DEFAULT_EPSILON) -> Tensor:
    w1, w2 = l1norm_weights(f1, f2, epsilon)
    if w1 == 0.0:
        return Tensor(f2.data, dtype=f2.dtype)
    if w2 == 0.0:
        return Tensor(f1.data, dtype=f1.dtype)
    out = w1 * f1.data.astype(np.float64) + w2 * f2.data.astype(np.float64)
    return Tensor(out, dtype=f1.dtype)


def activity_map(f: Tensor) -> np.ndarray:
    """3x3 box mean (edge-replicate) of the per-pixel channel-wise absolute sum: B x H x W."""
    mass = np.sum(np.abs(f.data), axis=1, dtype=np.float64)
    return uniform_filter(mass, size=(1, MEAN_FILTER_SIZE, MEAN_FILTER_SIZE), mode="nearest")


def meanfilter_weights(f1: Tensor, f2: Tensor, epsilon: float = DEFAULT_EPSILON):
    """Per-pixel weight maps (B x H x W) of the mean-filter rule; they sum to 1 everywhere."""
    _check_pair(f1, f2)
    a1 = activity_map(f1)
    a2 = activity_map(f2)
    total = a1 + a2
    live = total >= epsilon
    if not np.all(live):
        logger.debug("meanfilter fusion: %d pixels with zero activity use equal weights", int(np.sum(~live)))
    w1 = np.full_like(total, 0.5)
    np.divide(a1, total, out=w1, where=live)
    return w1, 1.0 - w1


def fuse_meanfilter(f1: Tensor, f2: Tensor, epsilon: float = DEFAULT_EPSILON) -> Tensor:
    w1, w2 = meanfilter_weights(f1, f2, epsilon)
    out = w1[:, None] * f1.data.astype(np.float64) + w2[:, None] * f2.data.astype(np.float64)
    return Tensor(out, dtype=f1.dtype)
