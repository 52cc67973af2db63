"""
Shared fixtures.

Everything is seeded, so tests can run in any order (pytest-randomly) and
in parallel (pytest-xdist).
"""

import numpy as np
import pytest

from src.amfusion.dataio import save_gray
from src.amfusion.nn.params import ArchConfig, init_params
from src.amfusion.synthetic import make_pair


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20240611))


@pytest.fixture
def tiny_config():
    return ArchConfig(base_channels=2, ca_reduction=4, image_side=16)


@pytest.fixture
def tiny_params(tiny_config):
    return init_params(tiny_config, seed=7)


@pytest.fixture
def synthetic_pair():
    return make_pair(side=32, seed=3)


@pytest.fixture
def pair_dirs(tmp_path):
    """Two registered 24x24 synthetic pairs written as PGM under ir/ and vis/."""
    ir_dir, vis_dir = tmp_path / "ir", tmp_path / "vis"
    for i, stem in enumerate(("a01", "b02")):
        ir, vis = make_pair(side=24, seed=i)
        save_gray(ir, ir_dir / f"{stem}.pgm")
        save_gray(vis, vis_dir / f"{stem}.pgm")
    return ir_dir, vis_dir
