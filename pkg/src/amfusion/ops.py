"""
Differentiable tensor operations.

Every op takes ``Tensor`` inputs, computes its result with numpy and records
a backward rule on the active tape. Layout for image data is B x C x H x W.
Reductions accumulate in float64 and cast back to the input dtype.
"""

from typing import List, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.amfusion.errors import ShapeError
from src.amfusion.tensor import Tensor, record

CONV_KERNEL_SIZES = (1, 3, 5, 7)
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x), requires_grad=False, dtype=dtype)


def _unbroadcast(grad, shape):
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for dim, size in enumerate(shape):
        if size == 1 and grad.shape[dim] != 1:
            grad = grad.sum(axis=dim, keepdims=True)
    return grad


def _require_4d(x: Tensor, op: str):
    if x.ndim != 4:
        raise ShapeError(f"{op} expects a B x C x H x W tensor, got shape {x.shape}")


# elementwise arithmetic


def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = (a.data + b.data).astype(a.dtype, copy=False)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record("add", (a, b), out, _backward)


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = (a.data - b.data).astype(a.dtype, copy=False)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record("sub", (a, b), out, _backward)


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = (a.data * b.data).astype(a.dtype, copy=False)

    def _backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record("mul", (a, b), out, _backward)


def div(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = (a.data / b.data).astype(a.dtype, copy=False)

    def _backward(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record("div", (a, b), out, _backward)


def neg(x: Tensor) -> Tensor:
    return record("neg", (x,), -x.data, lambda g: (-g,))


def square(x: Tensor) -> Tensor:
    return record("square", (x,), x.data * x.data, lambda g: (2.0 * g * x.data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def _backward(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, 0.5 * g / safe, 0.0).astype(x.dtype),)

    return record("sqrt", (x,), out, _backward)


def absolute(x: Tensor) -> Tensor:
    return record("abs", (x,), np.abs(x.data), lambda g: (g * np.sign(x.data),))


# reductions and reshaping


def sum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = np.sum(x.data, axis=axis, dtype=np.float64, keepdims=keepdims).astype(x.dtype)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return record("sum", (x,), np.asarray(out), _backward)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    out = np.mean(x.data, axis=axis, dtype=np.float64, keepdims=keepdims).astype(x.dtype)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype),)

    return record("mean", (x,), np.asarray(out), _backward)


def norm2(x: Tensor) -> Tensor:
    """Euclidean norm of all elements; the gradient at the origin is taken as zero."""
    value = np.sqrt(np.sum(x.data.astype(np.float64) ** 2))
    out = np.asarray(value, dtype=x.dtype)

    def _backward(g):
        if value == 0:
            return (np.zeros_like(x.data),)
        return ((g * x.data / value).astype(x.dtype),)

    return record("norm2", (x,), out, _backward)


def reshape(x: Tensor, shape) -> Tensor:
    return record("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(x.shape),))


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ShapeError("concat needs at least one tensor")
    ref = xs[0].shape
    for t in xs[1:]:
        if t.ndim != len(ref) or any(
            t.shape[d] != ref[d] for d in range(len(ref)) if d != axis
        ):
            raise ShapeError(f"cannot concat shapes {ref} and {t.shape} along axis {axis}")
    out = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def _backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs))
        )

    return record("concat", tuple(xs), out, _backward)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Stack B x Ci x H x W tensors along channels, xs[0] first."""
    for t in xs:
        _require_4d(t, "concat_channels")
    return concat(xs, axis=1)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _require_4d(x, "slice_channels")
    out = x.data[:, start:stop].copy()

    def _backward(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return record("slice_channels", (x,), out, _backward)


def split_channels(x: Tensor, sizes: Sequence[int]) -> List[Tensor]:
    if _total(sizes) != x.shape[1]:
        raise ShapeError(f"split sizes {list(sizes)} do not add up to {x.shape[1]} channels")
    parts, start = [], 0
    for size in sizes:
        parts.append(slice_channels(x, start, start + size))
        start += size
    return parts


def _total(values) -> int:
    total = 0
    for v in values:
        total += int(v)
    return total


def crop(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left height x width window."""
    _require_4d(x, "crop")
    if height > x.shape[2] or width > x.shape[3]:
        raise ShapeError(f"cannot crop {x.shape} to {height}x{width}")
    out = x.data[:, :, :height, :width].copy()

    def _backward(g):
        full = np.zeros_like(x.data)
        full[:, :, :height, :width] = g
        return (full,)

    return record("crop", (x,), out, _backward)


# convolution


def _im2col(xp, kh, kw, stride):
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return cols, ho, wo


def _col2im(dcols, xp_shape, kh, kw, stride, ho, wo, dtype):
    n, c = xp_shape[:2]
    dcols = dcols.reshape(n, ho, wo, c, kh, kw)
    dx = np.zeros(xp_shape, dtype=dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return dx


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """
    2-D cross-correlation with zero padding.

    Args:
        x: Input B x Cin x H x W
        w: Kernels Cout x Cin x k x k with k in {1, 3, 5, 7}
        b: Optional bias of length Cout
        stride: Step between output positions
        padding: Zero rows/columns added on every side

    Returns:
        Output B x Cout x H' x W', H' = (H + 2*padding - k) // stride + 1

    Raises:
        ShapeError: On channel mismatch, unsupported kernel or too-small input
    """
    _require_4d(x, "conv2d")
    if w.ndim != 4:
        raise ShapeError(f"conv2d weight must be Cout x Cin x k x k, got {w.shape}")
    cout, cin, kh, kw = w.shape
    if kh != kw or kh not in CONV_KERNEL_SIZES:
        raise ShapeError(f"unsupported conv kernel {kh}x{kw}")
    if x.shape[1] != cin:
        raise ShapeError(f"conv2d input has {x.shape[1]} channels, weight expects {cin}")
    if padding < 0 or stride < 1:
        raise ShapeError("conv2d needs padding >= 0 and stride >= 1")
    if x.shape[2] + 2 * padding < kh or x.shape[3] + 2 * padding < kw:
        raise ShapeError(f"input {x.shape} too small for a {kh}x{kw} kernel with padding {padding}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d bias must have shape ({cout},), got {b.shape}")

    xp = _pad(x.data, padding)
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    wf = w.data.reshape(cout, -1)
    out = (cols @ wf.T).reshape(x.shape[0], ho, wo, cout).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out, dtype=x.dtype)

    def _backward(g):
        gf = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (gf.T @ cols).reshape(w.shape).astype(w.dtype)
        dxp = _col2im(gf @ wf, xp.shape, kh, kw, stride, ho, wo, x.dtype)
        gx = dxp[:, :, padding:padding + x.shape[2], padding:padding + x.shape[3]] if padding else dxp
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)).astype(b.dtype))
        return tuple(grads)

    inputs = (x, w) if b is None else (x, w, b)
    return record("conv2d", inputs, out, _backward)


def filter2d(x: Tensor, kernel) -> Tensor:
    """
    Correlate every channel with one fixed 2-D kernel, valid positions only.

    The kernel is a constant (Gaussian windows, Sobel masks); gradients flow
    to ``x`` only.
    """
    _require_4d(x, "filter2d")
    kernel = np.asarray(kernel, dtype=x.dtype)
    kh, kw = kernel.shape
    n, c, h, w = x.shape
    if h < kh or w < kw:
        raise ShapeError(f"image {h}x{w} is smaller than the {kh}x{kw} window")
    flat = x.data.reshape(n * c, 1, h, w)
    cols, ho, wo = _im2col(flat, kh, kw, 1)
    kf = kernel.reshape(-1)
    out = (cols @ kf).reshape(n, c, ho, wo).astype(x.dtype)

    def _backward(g):
        dcols = g.reshape(-1, 1) * kf[None, :]
        dx = _col2im(dcols, flat.shape, kh, kw, 1, ho, wo, x.dtype)
        return (dx.reshape(x.shape),)

    return record("filter2d", (x,), out, _backward)


# activations


def relu(x: Tensor) -> Tensor:
    return record("relu", (x,), np.maximum(x.data, 0), lambda g: (g * (x.data > 0),))


def prelu(x: Tensor, a: Tensor) -> Tensor:
    """max(0, x) + a * min(0, x) with one learnable slope per layer."""
    if a.size != 1:
        raise ShapeError(f"prelu slope must be a single value, got shape {a.shape}")
    slope = a.data.reshape(())
    neg_part = np.minimum(x.data, 0)
    out = (np.maximum(x.data, 0) + slope * neg_part).astype(x.dtype)

    def _backward(g):
        gx = np.where(x.data > 0, g, g * slope).astype(x.dtype)
        ga = np.asarray(np.sum(g * neg_part, dtype=np.float64), dtype=a.dtype).reshape(a.shape)
        return gx, ga

    return record("prelu", (x, a), out, _backward)


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return record("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return record("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))


# normalization


class BatchNormState:
    """Running statistics of one batch-norm layer, updated in place in train mode."""

    def __init__(self, running_mean, running_var):
        self.running_mean = running_mean
        self.running_var = running_var


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, mode: str = "train",
               eps: float = BN_EPS, momentum: float = BN_MOMENTUM) -> Tensor:
    """
    Per-channel batch normalization.

    Train mode normalizes with batch statistics and updates the running
    mean/variance (unbiased) with ``momentum``; eval mode uses the running
    statistics.
    """
    _require_4d(x, "batch_norm")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm affine parameters must have shape ({c},)")
    count = n * h * w
    xd = x.data.astype(np.float64)
    if mode == "train":
        if count < 2:
            raise ShapeError("batch_norm in train mode needs at least two values per channel")
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        state.running_mean[...] = (1 - momentum) * state.running_mean + momentum * mu
        state.running_var[...] = (1 - momentum) * state.running_var + momentum * var * count / (count - 1)
    elif mode == "eval":
        mu = state.running_mean.astype(np.float64)
        var = state.running_var.astype(np.float64)
    else:
        raise ShapeError(f"unknown batch_norm mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu[None, :, None, None]) * inv_std[None, :, None, None]
    g_ = gamma.data.astype(np.float64)[None, :, None, None]
    out = (xhat * g_ + beta.data[None, :, None, None]).astype(x.dtype)

    def _backward(g):
        g64 = g.astype(np.float64)
        dgamma = np.sum(g64 * xhat, axis=(0, 2, 3)).astype(gamma.dtype)
        dbeta = np.sum(g64, axis=(0, 2, 3)).astype(beta.dtype)
        dxhat = g64 * g_
        if mode == "train":
            s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            dx = inv_std[None, :, None, None] / count * (count * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * inv_std[None, :, None, None]
        return dx.astype(x.dtype), dgamma, dbeta

    return record("batch_norm", (x, gamma, beta), out, _backward)


# pooling


def max_pool_spatial(x: Tensor) -> Tensor:
    """Channel-wise maximum at every pixel: B x C x H x W -> B x 1 x H x W."""
    _require_4d(x, "max_pool_spatial")
    idx = np.argmax(x.data, axis=1)[:, None]
    out = np.take_along_axis(x.data, idx, axis=1)

    def _backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g, axis=1)
        return (gx,)

    return record("max_pool_spatial", (x,), out, _backward)


def avg_pool_spatial(x: Tensor) -> Tensor:
    """Channel-wise mean at every pixel: B x C x H x W -> B x 1 x H x W."""
    _require_4d(x, "avg_pool_spatial")
    return mean(x, axis=1, keepdims=True)


def global_max_pool(x: Tensor) -> Tensor:
    """Spatial maximum per channel: B x C x H x W -> B x C x 1 x 1."""
    _require_4d(x, "global_max_pool")
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    idx = np.argmax(flat, axis=2)[:, :, None]
    out = np.take_along_axis(flat, idx, axis=2).reshape(n, c, 1, 1)

    def _backward(g):
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, idx, g.reshape(n, c, 1), axis=2)
        return (gx.reshape(x.shape),)

    return record("global_max_pool", (x,), out, _backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel: B x C x H x W -> B x C x 1 x 1."""
    _require_4d(x, "global_avg_pool")
    return mean(x, axis=(2, 3), keepdims=True)


def avg_pool_2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 mean; H and W must be even."""
    _require_4d(x, "avg_pool_2x2")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool_2x2 needs even spatial dims, got {h}x{w}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5), dtype=np.float64).astype(x.dtype)

    def _backward(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0,)

    return record("avg_pool_2x2", (x,), out, _backward)
