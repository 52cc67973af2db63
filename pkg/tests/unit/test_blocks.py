"""
Unit tests for the architecture plan, parameter initialization and the
forward blocks of the autoencoder.
"""

from collections import OrderedDict

import numpy as np
import pytest

from src.amfusion import ops
from src.amfusion.errors import ConfigError, ShapeError
from src.amfusion.fusion import FusionKind, FusionStrategy
from src.amfusion.nn import blocks
from src.amfusion.nn.params import ArchConfig, ModelParams, channel_trace, init_params, param_shapes
from src.amfusion.tensor import Tape, Tensor
from src.utils.math_utils import kaiming_uniform_bound
from tests.oracles import naive_conv2d


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _image(rng, batch=2, side=12):
    return Tensor(np.tanh(rng.normal(size=(batch, 1, side, side))))


def test_channel_trace_full_scale():
    """Test the c0 = 16 per-layer plan from the architecture table."""
    trace = channel_trace(ArchConfig(base_channels=16, ca_reduction=16, image_side=224))
    assert trace["enc.conv0"] == (1, 16)
    assert [trace[f"mk1.conv{k}"][1] for k in (3, 5, 7)] == [32, 32, 32]
    assert trace["mk2.conv5"] == (96, 64)
    assert trace["mk3.conv7"] == (192, 128)
    assert [trace[f"mk{k}"][1] for k in (1, 2, 3)] == [96, 192, 384]
    assert trace["psc"] == (384, 384)
    assert trace["res.conv"] == (384, 384)
    assert [trace[f"dec{i}.conv"] for i in range(1, 6)] == [(768, 384), (384, 192), (192, 96), (96, 48), (48, 1)]


def test_full_scale_parameter_shapes():
    """Test that instantiated c0 = 16 parameters carry the planned channel counts."""
    params = init_params(ArchConfig(base_channels=16, ca_reduction=16, image_side=224), seed=0)
    assert params["enc.conv0.w"].shape == (16, 1, 3, 3)
    assert params["mk3.conv3.w"].shape == (128, 192, 3, 3)
    assert params["psc.ca.fc1.w"].shape == (24, 384, 1, 1)
    assert params["res.conv.w"].shape == (384, 384, 3, 3)
    assert params["dec1.conv.w"].shape == (384, 768, 3, 3)
    assert params["dec5.conv.w"].shape == (1, 48, 3, 3)
    assert "dec5.bn.gamma" not in param_shapes(params.config)


@pytest.mark.parametrize("c0, r, side", [
    (1, 1, 64),
    (2, 5, 64),
    (4, 0, 64),
    (4, 4, 0),
])
def test_arch_config_rejects_invalid(c0, r, side):
    """Test the base-channel, reduction and side invariants."""
    with pytest.raises(ConfigError):
        ArchConfig(base_channels=c0, ca_reduction=r, image_side=side)


def test_init_params_is_deterministic(tiny_config):
    """Test bitwise-equal parameters for equal seeds and different ones otherwise."""
    a = init_params(tiny_config, seed=11)
    b = init_params(tiny_config, seed=11)
    c = init_params(tiny_config, seed=12)
    assert a.equals(b)
    assert not a.equals(c)


def test_init_params_constants(tiny_params):
    """Test biases, BN affine terms, running stats and PReLU slopes."""
    for name, tensor in tiny_params.items():
        if name.endswith(".b") or name.endswith(".beta") or name.endswith(".running_mean"):
            assert not tensor.data.any(), name
        elif name.endswith(".gamma") or name.endswith(".running_var"):
            assert np.all(tensor.data == 1.0), name
        elif "prelu" in name:
            assert np.all(tensor.data == np.float32(0.25)), name
        else:
            bound = kaiming_uniform_bound(int(np.prod(tensor.shape[1:])))
            assert np.all(np.abs(tensor.data) <= bound + 1e-7), name


def test_init_weight_spread_matches_kaiming():
    """Test that the empirical weight std is within 20% of sqrt(2 / fan_in) over ten seeds."""
    config = ArchConfig(base_channels=2, ca_reduction=4, image_side=16)
    expected = np.sqrt(2.0 / (48 * 9))
    for seed in range(10):
        w = init_params(config, seed)["res.conv.w"].data
        assert abs(w.std() / expected - 1.0) < 0.2


def test_model_params_validates_shapes(tiny_params):
    """Test that a tensor of the wrong shape or a missing name is rejected."""
    tensors = OrderedDict(tiny_params.items())
    tensors["enc.conv0.b"] = Tensor(np.zeros(3))
    with pytest.raises(ConfigError):
        ModelParams(tiny_params.config, tensors)
    tensors = OrderedDict(tiny_params.items())
    del tensors["res.conv.b"]
    with pytest.raises(ConfigError):
        ModelParams(tiny_params.config, tensors)


def test_trainable_names_skip_running_stats(tiny_params):
    """Test that BN running statistics are not optimizer targets."""
    names = tiny_params.trainable_names()
    assert "dec1.bn.gamma" in names
    assert not any(n.endswith((".running_mean", ".running_var")) for n in names)
    assert len(names) == len(tiny_params) - 8


def test_encoder_output_channels(rng):
    """Test 2 x 1 x 64 x 64 -> 2 x 96 x 64 x 64 at c0 = 4."""
    params = init_params(ArchConfig(base_channels=4, ca_reduction=4, image_side=64), seed=1)
    out = blocks.encoder_forward(Tensor(np.tanh(rng.normal(size=(2, 1, 64, 64)))), params)
    assert out.shape == (2, 96, 64, 64)


def test_autoencode_shape_and_range(rng, tiny_params):
    """Test that reconstruction keeps the spatial size and lies in (-1, 1)."""
    img = _image(rng, batch=2, side=11)
    out = blocks.autoencode(img, tiny_params)
    assert out.shape == img.shape
    assert np.all(np.abs(out.data) < 1.0)


def test_encoder_rejects_multichannel_input(tiny_params):
    """Test that the encoder only accepts single-channel images."""
    with pytest.raises(ShapeError):
        blocks.encoder_forward(Tensor(np.zeros((1, 2, 8, 8))), tiny_params)


def test_decoder_rejects_wrong_channels(tiny_params):
    """Test the decoder channel guard."""
    with pytest.raises(ShapeError):
        blocks.decoder_forward(Tensor(np.zeros((1, 5, 8, 8))), tiny_params)


def test_mkblock_guards(rng, tiny_params):
    """Test the block index and input channel checks."""
    with pytest.raises(ConfigError):
        blocks.mkblock_forward(Tensor(np.zeros((1, 2, 8, 8))), tiny_params, 4)
    with pytest.raises(ConfigError):
        blocks.mkblock_forward(Tensor(np.zeros((1, 3, 8, 8))), tiny_params, 1)
    out = blocks.mkblock_forward(Tensor(rng.normal(size=(1, 12, 8, 8))), tiny_params, 2)
    assert out.shape == (1, 24, 8, 8)


def test_spatial_attention_matches_composition(rng, tiny_params):
    """Test SA against pooling, a loop convolution and sigmoid written out by hand."""
    params = tiny_params.cast(np.float64)
    x = rng.normal(size=(2, 48, 6, 6))
    out = blocks.spatial_attention(Tensor(x, dtype=np.float64), params).data
    pooled = np.concatenate([x.max(axis=1, keepdims=True), x.mean(axis=1, keepdims=True)], axis=1)
    expected = _sigmoid(naive_conv2d(pooled, params["psc.sa.w"].data, params["psc.sa.b"].data, padding=1))
    np.testing.assert_allclose(out, expected, atol=1e-12)
    assert np.all((out > 0) & (out < 1))


def test_spatial_attention_constant_input(tiny_params):
    """Test that a constant field gives a constant map away from the zero-padded border."""
    out = blocks.spatial_attention(Tensor(np.full((1, 48, 7, 7), 0.3)), tiny_params).data[0, 0]
    interior = out[1:-1, 1:-1]
    np.testing.assert_allclose(interior, interior[0, 0], rtol=1e-6)


def test_channel_attention_matches_composition(rng, tiny_params):
    """Test CA against the shared bottleneck over max and mean pools."""
    params = tiny_params.cast(np.float64)
    x = rng.normal(size=(2, 48, 5, 5))
    out = blocks.channel_attention(Tensor(x, dtype=np.float64), params).data
    w1 = params["psc.ca.fc1.w"].data[:, :, 0, 0]
    b1 = params["psc.ca.fc1.b"].data
    w2 = params["psc.ca.fc2.w"].data[:, :, 0, 0]
    b2 = params["psc.ca.fc2.b"].data

    def mlp(v):
        return w2 @ np.maximum(w1 @ v + b1, 0) + b2

    for b in range(2):
        expected = _sigmoid(mlp(x[b].max(axis=(1, 2))) + mlp(x[b].mean(axis=(1, 2))))
        np.testing.assert_allclose(out[b, :, 0, 0], expected, atol=1e-12)


def test_channel_attention_zero_bottleneck_is_half(rng, tiny_params):
    """Test that an all-zero bottleneck gates every channel with sigmoid(0) = 0.5."""
    for name in ("psc.ca.fc1.w", "psc.ca.fc1.b", "psc.ca.fc2.w", "psc.ca.fc2.b"):
        tiny_params[name].data[...] = 0
    out = blocks.channel_attention(Tensor(rng.normal(size=(1, 48, 4, 4))), tiny_params)
    assert out.shape == (1, 48, 1, 1)
    np.testing.assert_array_equal(out.data, 0.5)


def test_pscnet_with_unit_gates_is_identity(rng, tiny_params):
    """Test that stubbed gates of one return the input."""
    x = Tensor(rng.normal(size=(1, 48, 4, 4)), dtype=np.float64)
    out = blocks.pscnet_forward(x, tiny_params, ca=Tensor(np.ones((1, 48, 1, 1)), dtype=np.float64),
                                sa=Tensor(np.ones((1, 1, 4, 4)), dtype=np.float64))
    np.testing.assert_array_equal(out.data, x.data)


def test_pscnet_zero_input(tiny_params):
    """Test that a zero feature map stays zero."""
    out = blocks.pscnet_forward(Tensor(np.zeros((1, 48, 4, 4))), tiny_params)
    assert not out.data.any()


def test_pscnet_branches_are_parallel(rng, tiny_params):
    """Test y = (x * CA(x) + x * SA(x)) / 2 regardless of branch evaluation order."""
    params = tiny_params.cast(np.float64)
    x = Tensor(rng.normal(size=(2, 48, 5, 5)), dtype=np.float64)
    sa = blocks.spatial_attention(x, params)
    ca = blocks.channel_attention(x, params)
    expected = 0.5 * (x.data * ca.data + x.data * sa.data)
    np.testing.assert_allclose(blocks.pscnet_forward(x, params).data, expected, atol=1e-12)
    np.testing.assert_allclose(blocks.pscnet_forward(x, params, ca=ca, sa=sa).data, expected, atol=1e-12)


def test_pscnet_bypassed_without_attention(rng, tiny_params):
    """Test that the attention-free variant passes features through untouched."""
    config = ArchConfig(base_channels=2, ca_reduction=4, image_side=16, use_attention=False)
    params = ModelParams(config, OrderedDict(tiny_params.items()))
    x = Tensor(rng.normal(size=(1, 48, 4, 4)))
    assert blocks.pscnet_forward(x, params) is x


@pytest.mark.parametrize("kind", list(FusionKind))
def test_fuse_equal_inputs_matches_autoencode(rng, tiny_params, kind):
    """Test that fusing an image with itself reproduces its reconstruction exactly."""
    img = _image(rng, batch=1, side=10)
    fused = blocks.fuse_forward(img, img, tiny_params, FusionStrategy(kind))
    np.testing.assert_array_equal(fused.data, blocks.autoencode(img, tiny_params, mode="eval").data)


def test_fuse_forward_shape_and_range(rng, tiny_params):
    """Test fused output shape and tanh range."""
    fused = blocks.fuse_forward(_image(rng, 1, 9), _image(rng, 1, 9), tiny_params, FusionStrategy())
    assert fused.shape == (1, 1, 9, 9)
    assert np.all(np.abs(fused.data) < 1.0)


def test_fuse_forward_shape_mismatch(rng, tiny_params):
    """Test that IR and VIS must have the same size."""
    with pytest.raises(ShapeError):
        blocks.fuse_forward(_image(rng, 1, 8), _image(rng, 1, 9), tiny_params, FusionStrategy())


def test_train_mode_updates_running_stats_eval_does_not(rng, tiny_params):
    """Test the batch-norm mode switch on the decoder."""
    img = _image(rng, batch=2, side=8)
    before = tiny_params["dec1.bn.running_mean"].data.copy()
    blocks.autoencode(img, tiny_params, mode="eval")
    np.testing.assert_array_equal(tiny_params["dec1.bn.running_mean"].data, before)
    blocks.autoencode(img, tiny_params, mode="train")
    assert not np.array_equal(tiny_params["dec1.bn.running_mean"].data, before)


@pytest.mark.parametrize("use_attention", [True, False])
def test_gradients_reach_parameters(rng, tiny_params, use_attention):
    """Test that backward populates encoder grads, and attention grads only when enabled."""
    config = ArchConfig(base_channels=2, ca_reduction=4, image_side=16, use_attention=use_attention)
    params = ModelParams(config, OrderedDict(tiny_params.items()))
    img = _image(rng, batch=2, side=8)
    with Tape() as tape:
        loss = ops.mean(ops.square(ops.sub(blocks.autoencode(img, params, mode="train"), img)))
    tape.backward(loss)
    assert params["enc.conv0.w"].grad is not None and np.any(params["enc.conv0.w"].grad)
    assert params["dec5.conv.b"].grad is not None
    assert (params["psc.sa.w"].grad is not None) == use_attention
