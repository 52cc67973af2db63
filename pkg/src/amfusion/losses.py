"""
Training objectives.

All losses take an output ``O`` and a target ``I`` of identical shape
(B x C x H x W), are built from differentiable ops and return scalar
tensors. SSIM statistics use a normalized Gaussian window over valid
positions only.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Tuple

import numpy as np

from src.amfusion import ops
from src.amfusion.errors import ConfigError, ShapeError
from src.amfusion.tensor import Tensor

logger = logging.getLogger(__name__)

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 2.0
    alpha4: float = 0.005
    beta: float = 0.0025

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "alpha3", "alpha4"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not 0.0 < self.beta < 1.0:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    dynamic_range: float = 2.0
    scales: int = 3
    k1: float = 0.01
    k2: float = 0.03

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"ssim window must be a positive odd size, got {self.window}")
        if self.sigma <= 0:
            raise ConfigError(f"ssim sigma must be positive, got {self.sigma}")
        if self.scales < 1:
            raise ConfigError(f"msssim scales must be >= 1, got {self.scales}")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    @property
    def min_side(self) -> int:
        """Smallest image side for which every MS-SSIM scale still fits the window."""
        return self.window * 2 ** (self.scales - 1)

    def kernel(self) -> np.ndarray:
        return gaussian_window(self.window, self.sigma)


@dataclass(frozen=True)
class LossConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    ssim: SsimConfig = field(default_factory=SsimConfig)
    pixel_squared: bool = False


@dataclass
class LossTerms:
    """Unweighted loss terms plus their weighted total (the value that is backpropagated)."""

    pixel: Tensor
    ssim: Tensor
    msl1: Tensor
    grad: Tensor
    total: Tensor

    def as_row(self) -> Tuple[float, float, float, float, float]:
        return (self.pixel.item(), self.ssim.item(), self.msl1.item(), self.grad.item(), self.total.item())


@lru_cache(maxsize=16)
def _gaussian(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    window /= window.sum()
    window.setflags(write=False)
    return window


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized size x size Gaussian window."""
    return _gaussian(int(size), float(sigma))


def _check_same(O: Tensor, I: Tensor, what: str):
    if O.shape != I.shape:
        raise ShapeError(f"{what}: output shape {O.shape} differs from target shape {I.shape}")
    if O.ndim != 4:
        raise ShapeError(f"{what}: expected B x C x H x W tensors, got {O.shape}")


def loss_pixel(O: Tensor, I: Tensor, squared: bool = False) -> Tensor:
    """
    ||O - I||_2 / (B*C*H*W).

    Args:
        O: Output tensor
        I: Target tensor
        squared: Use the squared norm instead of the norm itself

    Returns:
        Scalar loss tensor
    """
    _check_same(O, I, "loss_pixel")
    diff = ops.sub(O, I)
    value = ops.sum(ops.square(diff)) if squared else ops.norm2(diff)
    return ops.mul(value, 1.0 / O.size)


def ssim_components(O: Tensor, I: Tensor, cfg: SsimConfig) -> Tuple[Tensor, Tensor]:
    """
    Per-window luminance and contrast-structure maps.

    Returns:
        (l, cs), each B x C x (H-w+1) x (W-w+1)

    Raises:
        ShapeError: If the images are smaller than the window
    """
    _check_same(O, I, "ssim")
    kernel = cfg.kernel()
    mu_o = ops.filter2d(O, kernel)
    mu_i = ops.filter2d(I, kernel)
    mu_oo = ops.square(mu_o)
    mu_ii = ops.square(mu_i)
    mu_oi = ops.mul(mu_o, mu_i)
    var_o = ops.sub(ops.filter2d(ops.square(O), kernel), mu_oo)
    var_i = ops.sub(ops.filter2d(ops.square(I), kernel), mu_ii)
    cov = ops.sub(ops.filter2d(ops.mul(O, I), kernel), mu_oi)
    lum = ops.div(ops.add(ops.mul(mu_oi, 2.0), cfg.c1), ops.add(ops.add(mu_oo, mu_ii), cfg.c1))
    cs = ops.div(ops.add(ops.mul(cov, 2.0), cfg.c2), ops.add(ops.add(var_o, var_i), cfg.c2))
    return lum, cs


def ssim(O: Tensor, I: Tensor, cfg: SsimConfig) -> Tensor:
    """Mean windowed SSIM; 1 for identical inputs."""
    lum, cs = ssim_components(O, I, cfg)
    return ops.mean(ops.mul(lum, cs))


def loss_ssim(O: Tensor, I: Tensor, cfg: SsimConfig) -> Tensor:
    return ops.sub(1.0, ssim(O, I, cfg))


def _downscale(x: Tensor) -> Tensor:
    h, w = x.shape[2] - x.shape[2] % 2, x.shape[3] - x.shape[3] % 2
    if (h, w) != x.shape[2:]:
        x = ops.crop(x, h, w)
    return ops.avg_pool_2x2(x)


def loss_msssim(O: Tensor, I: Tensor, cfg: SsimConfig) -> Tensor:
    """
    1 - l_M * prod_j cs_j with luminance at the coarsest scale only and no
    per-scale exponents. Scale j+1 is the 2x2 average pool of scale j.

    Raises:
        ShapeError: If min(H, W) < window * 2**(scales - 1)
    """
    _check_same(O, I, "loss_msssim")
    if min(O.shape[2], O.shape[3]) < cfg.min_side:
        raise ShapeError(
            f"MS-SSIM with {cfg.scales} scales needs images of side >= {cfg.min_side}, got {O.shape[2]}x{O.shape[3]}"
        )
    product = None
    for scale in range(1, cfg.scales + 1):
        lum, cs = ssim_components(O, I, cfg)
        term = ops.mean(ops.mul(lum, cs)) if scale == cfg.scales else ops.mean(cs)
        product = term if product is None else ops.mul(product, term)
        if scale < cfg.scales:
            O, I = _downscale(O), _downscale(I)
    return ops.sub(1.0, product)


def loss_l1(O: Tensor, I: Tensor) -> Tensor:
    """||O - I||_1 / (H*W)."""
    _check_same(O, I, "loss_l1")
    return ops.mul(ops.sum(ops.absolute(ops.sub(O, I))), 1.0 / (O.shape[2] * O.shape[3]))


def combine_msssim_l1(O: Tensor, I: Tensor, beta: float, cfg: SsimConfig) -> Tensor:
    """(1 - beta) * L_msssim + beta * L_l1."""
    return ops.add(ops.mul(loss_msssim(O, I, cfg), 1.0 - beta), ops.mul(loss_l1(O, I), beta))


def sobel_field(x: Tensor) -> Tensor:
    """Horizontal and vertical Sobel responses stacked along channels (valid positions)."""
    return ops.concat_channels([ops.filter2d(x, SOBEL_X), ops.filter2d(x, SOBEL_Y)])


def loss_grad(O: Tensor, I: Tensor) -> Tensor:
    """Mean absolute difference of the stacked Sobel fields of O and I."""
    _check_same(O, I, "loss_grad")
    if O.shape[2] < 3 or O.shape[3] < 3:
        raise ShapeError(f"loss_grad needs images of at least 3x3, got {O.shape[2]}x{O.shape[3]}")
    return ops.mean(ops.absolute(ops.sub(sobel_field(O), sobel_field(I))))


def loss_terms(O: Tensor, I: Tensor, weights: LossWeights, cfg: SsimConfig, pixel_squared: bool = False) -> LossTerms:
    pixel = loss_pixel(O, I, squared=pixel_squared)
    structural = loss_ssim(O, I, cfg)
    msl1 = combine_msssim_l1(O, I, weights.beta, cfg)
    grad = loss_grad(O, I)
    total = ops.add(
        ops.add(ops.mul(pixel, weights.alpha1), ops.mul(structural, weights.alpha2)),
        ops.add(ops.mul(msl1, weights.alpha3), ops.mul(grad, weights.alpha4)),
    )
    return LossTerms(pixel, structural, msl1, grad, total)


def loss_total(O: Tensor, I: Tensor, weights: LossWeights, cfg: SsimConfig, pixel_squared: bool = False) -> Tensor:
    """alpha1*L_pixel + alpha2*L_ssim + alpha3*L_msssim_l1 + alpha4*L_grad."""
    return loss_terms(O, I, weights, cfg, pixel_squared=pixel_squared).total
