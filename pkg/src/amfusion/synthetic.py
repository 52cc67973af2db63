"""
Synthetic registered IR/VIS pairs for tests, demos and toy training.

The IR frame carries a few warm blobs on a smooth background; the VIS frame
carries texture and edges with the blobs barely visible. Each source thus
holds information the other lacks.
"""

import logging
from typing import Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from src.amfusion.errors import ShapeError

logger = logging.getLogger(__name__)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed & 0xFFFFFFFFFFFFFFFF))


def make_pair(side: int = 64, seed: int = 0, blobs: int = 3) -> Tuple[np.ndarray, np.ndarray]:
    """
    Build one (ir, vis) pair of side x side uint8 images.

    Raises:
        ShapeError: If side < 8
    """
    if side < 8:
        raise ShapeError(f"synthetic pairs need side >= 8, got {side}")
    rng = _rng(seed)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)

    ir = 40.0 + 20.0 * (yy / side)
    for _ in range(blobs):
        cy, cx = rng.uniform(0.2, 0.8, size=2) * side
        radius = rng.uniform(0.06, 0.14) * side
        ir += rng.uniform(120.0, 180.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * radius ** 2))
    ir += rng.normal(0.0, 2.0, size=ir.shape)

    period = rng.uniform(5.0, 9.0)
    vis = 110.0 + 45.0 * np.sign(np.sin(2.0 * np.pi * xx / period)) * (yy > side / 3)
    vis += 30.0 * np.sin(2.0 * np.pi * (xx + yy) / (2.5 * period))
    vis += gaussian_filter(rng.normal(0.0, 25.0, size=vis.shape), 0.7)
    vis += 0.1 * (ir - 40.0)

    return _to_u8(ir), _to_u8(vis)


def blur(img: np.ndarray, sigma: float = 2.0) -> np.ndarray:
    """Gaussian-blurred copy of a uint8 image."""
    return _to_u8(gaussian_filter(img.astype(np.float64), sigma, mode="nearest"))


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)
