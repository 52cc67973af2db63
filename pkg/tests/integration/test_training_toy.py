"""
Integration tests for end-to-end training on synthetic pairs.
"""

import numpy as np
import pytest

from src.amfusion import metrics
from src.amfusion.dataio import ImagePair, preprocess, quantize, to_tensor
from src.amfusion.fusion import FusionKind, FusionStrategy
from src.amfusion.losses import LossConfig, SsimConfig
from src.amfusion.nn.blocks import fuse_forward
from src.amfusion.nn.params import ArchConfig, init_params
from src.amfusion.nn.weights import encode_weights, load_weights
from src.amfusion.synthetic import blur, make_pair
from src.amfusion.training import TrainConfig, train, write_trace_csv


def synthetic_pairs(count, side):
    pairs = []
    for seed in range(count):
        ir, vis = make_pair(side=side, seed=seed)
        pairs.append(ImagePair(f"s{seed:02d}", preprocess(ir, side), preprocess(vis, side)))
    return pairs


def tiny_config(**overrides):
    values = dict(
        arch=ArchConfig(base_channels=2, ca_reduction=4, image_side=16),
        loss=LossConfig(ssim=SsimConfig(scales=1)),
        batch_size=2,
        iterations=3,
        seed=5,
    )
    values.update(overrides)
    return TrainConfig(**values)


def trace_rows(result):
    return [row.as_tuple() for row in result.trace]


def test_training_is_bitwise_deterministic():
    pairs = synthetic_pairs(2, 16)
    first = train(pairs, tiny_config())
    second = train(synthetic_pairs(2, 16), tiny_config())
    assert trace_rows(first) == trace_rows(second)
    assert first.params.equals(second.params)
    assert [row.iteration for row in first.trace] == [1, 2, 3]


def test_seed_changes_the_run():
    pairs = synthetic_pairs(2, 16)
    assert trace_rows(train(pairs, tiny_config(seed=1))) != trace_rows(train(pairs, tiny_config(seed=2)))


def test_zero_learning_rate_gives_flat_trace():
    """Test that lr = 0 on a single image repeats the same step."""
    image = preprocess(make_pair(side=16, seed=4)[0], 16)
    result = train(None, tiny_config(learning_rate=0.0, batch_size=1, iterations=3), images=[image])
    totals = {row.total for row in result.trace}
    assert len(totals) == 1


def test_trace_total_matches_weighted_terms():
    result = train(synthetic_pairs(1, 16), tiny_config())
    w = tiny_config().loss.weights
    for row in result.trace:
        expected = w.alpha1 * row.pixel + w.alpha2 * row.ssim + w.alpha3 * row.msl1 + w.alpha4 * row.grad
        assert row.total == pytest.approx(expected, rel=1e-5)


def test_epoch_mode_counts_passes():
    result = train(synthetic_pairs(2, 16), tiny_config(epoch_mode=True, batch_size=3, iterations=2))
    # four images in batches of three: two steps per epoch
    assert len(result.trace) == 4


def test_checkpoints_are_loadable(tmp_path):
    result = train(synthetic_pairs(1, 16), tiny_config(iterations=4, checkpoint_interval=2), checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ckpt_000002.amfw", "ckpt_000004.amfw"]
    final = load_weights(tmp_path / "ckpt_000004.amfw")
    assert final.equals(result.params)


def test_training_without_attention_leaves_attention_weights():
    """Test that bypassed attention parameters get zero updates."""
    arch = ArchConfig(base_channels=2, ca_reduction=4, image_side=16, use_attention=False)
    result = train(synthetic_pairs(1, 16), tiny_config(arch=arch))
    initial = init_params(arch, 5)
    for name in ("psc.sa.w", "psc.ca.fc1.w", "psc.ca.fc2.b"):
        np.testing.assert_array_equal(result.params[name].data, initial[name].data)
    assert not np.array_equal(result.params["enc.conv0.w"].data, initial["enc.conv0.w"].data)


def complementary_pair(side, seed):
    """A sharp frame split into two inputs, each blurred on a different half."""
    _, sharp = make_pair(side=side, seed=seed)
    soft = blur(sharp, 2.0)
    left_sharp, right_sharp = sharp.copy(), sharp.copy()
    left_sharp[:, side // 2:] = soft[:, side // 2:]
    right_sharp[:, :side // 2] = soft[:, :side // 2]
    return left_sharp, right_sharp


@pytest.mark.slow
def test_toy_run_halves_the_loss_and_fuses_detail(tmp_path):
    """c0=4, 64x64, four pairs, 200 Adam steps, repeated bitwise."""
    cfg = TrainConfig(
        arch=ArchConfig(base_channels=4, ca_reduction=4, image_side=64),
        loss=LossConfig(ssim=SsimConfig(scales=3)),
        batch_size=4,
        iterations=200,
        seed=0,
    )
    pairs = synthetic_pairs(4, 64)
    result = train(pairs, cfg)
    assert len(result.trace) == 200
    assert result.trace[-1].total <= 0.5 * result.trace[0].total

    repeat = train(pairs, cfg)
    assert encode_weights(repeat.params) == encode_weights(result.params)
    write_trace_csv(result.trace, tmp_path / "first.csv")
    write_trace_csv(repeat.trace, tmp_path / "second.csv")
    assert (tmp_path / "first.csv").read_bytes() == (tmp_path / "second.csv").read_bytes()

    a, b = complementary_pair(64, seed=11)
    fused = quantize(fuse_forward(to_tensor(a), to_tensor(b), result.params, FusionStrategy(FusionKind.MEAN_FILTER)))
    for source in (a, b):
        assert metrics.sf(fused) > metrics.sf(source)
        assert metrics.en(fused) > metrics.en(source)
