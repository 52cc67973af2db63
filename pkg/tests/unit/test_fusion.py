"""
Unit tests for the feature-map fusion rules.
"""

import logging

import numpy as np
import pytest

from src.amfusion import fusion
from src.amfusion.errors import ConfigError, ShapeError
from src.amfusion.fusion import FusionKind, FusionStrategy
from src.amfusion.tensor import Tensor
from tests.oracles import naive_meanfilter_fuse

ALL_KINDS = list(FusionKind)


def features(rng, shape=(1, 4, 5, 6)):
    return Tensor(rng.normal(size=shape), dtype=np.float64)


@pytest.mark.parametrize("name, kind", [
    ("avg", FusionKind.WEIGHTED_AVERAGE),
    ("l1", FusionKind.L1_NORM),
    ("mean", FusionKind.MEAN_FILTER),
    (" L1 ", FusionKind.L1_NORM),
])
def test_parse_strategy(name, kind):
    """Test CLI names map onto strategies and back."""
    strategy = fusion.parse_strategy(name)
    assert strategy.kind is kind
    assert strategy.cli_name == kind.value


def test_parse_strategy_unknown():
    """Test that an unknown strategy name is a config error listing the choices."""
    with pytest.raises(ConfigError) as excinfo:
        fusion.parse_strategy("max")
    assert "avg, l1, mean" in str(excinfo.value)


def test_strategy_rejects_nonpositive_epsilon():
    """Test the epsilon guard."""
    with pytest.raises(ConfigError):
        FusionStrategy(epsilon=0.0)


def test_weighted_average(rng):
    """Test the plain mean of the two stacks."""
    f1, f2 = features(rng), features(rng)
    np.testing.assert_allclose(fusion.fuse_weighted_average(f1, f2).data, (f1.data + f2.data) / 2)


def test_l1norm_weights_from_stack_mass(rng):
    """Test that per-source weights follow the L1 mass of each whole stack."""
    f1 = features(rng)
    f2 = Tensor(3.0 * f1.data, dtype=np.float64)
    w1, w2 = fusion.l1norm_weights(f1, f2)
    assert w1 == pytest.approx(0.25)
    assert w2 == pytest.approx(0.75)
    np.testing.assert_allclose(fusion.fuse_l1norm(f1, f2).data, 2.5 * f1.data)


def test_l1norm_with_zero_stack_returns_other_exactly(rng):
    """Test that an all-zero source hands over the other stack unchanged."""
    zero = Tensor(np.zeros((1, 4, 5, 6)), dtype=np.float64)
    f2 = features(rng)
    np.testing.assert_array_equal(fusion.fuse_l1norm(zero, f2).data, f2.data)
    np.testing.assert_array_equal(fusion.fuse_l1norm(f2, zero).data, f2.data)


def test_l1norm_both_zero_warns_and_splits_evenly(caplog):
    """Test the degenerate equal split with a warning."""
    zero = Tensor(np.zeros((1, 2, 3, 3)))
    with caplog.at_level(logging.WARNING, logger="src.amfusion.fusion"):
        assert fusion.l1norm_weights(zero, zero) == (0.5, 0.5)
    assert "both feature stacks are zero" in caplog.text


def test_meanfilter_matches_pixel_loop(rng):
    """Test the mean-filter rule against a per-pixel loop with replicated borders."""
    f1, f2 = features(rng), features(rng)
    np.testing.assert_allclose(fusion.fuse_meanfilter(f1, f2).data, naive_meanfilter_fuse(f1.data, f2.data),
                               atol=1e-12)


def test_meanfilter_zero_activity_uses_equal_weights():
    """Test the where-guard on pixels where both activities vanish."""
    zero = Tensor(np.zeros((1, 2, 4, 4)), dtype=np.float64)
    w1, w2 = fusion.meanfilter_weights(zero, zero)
    np.testing.assert_array_equal(w1, 0.5)
    np.testing.assert_array_equal(w2, 0.5)


def test_activity_map_shape(rng):
    """Test that the activity map drops the channel axis."""
    assert fusion.activity_map(features(rng, (2, 3, 4, 5))).shape == (2, 4, 5)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_strategy_properties_on_random_pairs(kind):
    """Test symmetry, idempotence, convexity and unit weight sums over 100 random pairs."""
    strategy = FusionStrategy(kind)
    for seed in range(100):
        rng = np.random.Generator(np.random.PCG64(seed))
        f1, f2 = features(rng, (1, 3, 4, 4)), features(rng, (1, 3, 4, 4))
        fused = strategy(f1, f2).data
        np.testing.assert_allclose(fused, strategy(f2, f1).data, atol=1e-12)
        np.testing.assert_array_equal(strategy(f1, f1).data, f1.data)
        lo, hi = np.minimum(f1.data, f2.data), np.maximum(f1.data, f2.data)
        assert np.all(fused >= lo - 1e-12) and np.all(fused <= hi + 1e-12)
        if kind is FusionKind.L1_NORM:
            assert sum(fusion.l1norm_weights(f1, f2)) == pytest.approx(1.0, abs=1e-9)
        elif kind is FusionKind.MEAN_FILTER:
            w1, w2 = fusion.meanfilter_weights(f1, f2)
            np.testing.assert_allclose(w1 + w2, 1.0, atol=1e-9)
            assert np.all((w1 >= 0) & (w1 <= 1))


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_output_keeps_input_dtype(rng, kind):
    """Test that float32 feature maps come back as float32."""
    f1 = Tensor(rng.normal(size=(1, 2, 3, 3)))
    f2 = Tensor(rng.normal(size=(1, 2, 3, 3)))
    assert FusionStrategy(kind)(f1, f2).dtype == np.float32


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_shape_mismatch(rng, kind):
    """Test that the two stacks must have identical shapes."""
    with pytest.raises(ShapeError):
        FusionStrategy(kind)(features(rng, (1, 2, 3, 3)), features(rng, (1, 2, 3, 4)))
