"""Forward/backward kernels.

The public functions take (batch, channels, height, width) arrays and
(out, in, k, k) weights. Layers call the ``*_nhwc`` variants, which keep
channels last so that im2col columns are a single contiguous copy and can be
reused by the backward pass.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


def _check_conv(x_channels, weight):
    if weight.ndim != 4:
        raise ShapeError(f"conv weight must be (out, in, k, k), got {weight.shape}")
    if weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"only square kernels are supported, got {weight.shape[2:]}")
    if x_channels != weight.shape[1]:
        raise ShapeError(f"input has {x_channels} channels, weight expects {weight.shape[1]}")


def _weight_matrix(weight):
    o, c, k, _ = weight.shape
    return weight.transpose(2, 3, 1, 0).reshape(k * k * c, o)


def conv_nhwc_forward(x, weight, bias, padding):
    """Returns ``(out, cols)``; ``x`` is (B, H, W, C), ``out`` is (B, H', W', O)."""
    if x.ndim != 4:
        raise ShapeError(f"conv input must be 4D, got {x.shape}")
    _check_conv(x.shape[3], weight)
    k = weight.shape[2]
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    b, hp, wp, c = x.shape
    ho, wo = hp - k + 1, wp - k + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {k} larger than padded input {(hp, wp)}")
    if k == 1:
        cols = x.reshape(b * ho * wo, c)
    else:
        win = sliding_window_view(x, (k, k), axis=(1, 2))  # (B, H', W', C, k, k)
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, k * k * c)
    out = cols @ _weight_matrix(weight)
    if bias is not None:
        out += bias
    return out.reshape(b, ho, wo, weight.shape[0]), cols


def conv_nhwc_backward(grad_out, cols, weight, x_shape, padding):
    """Returns ``(grad_input, grad_weight, grad_bias)`` with grad_weight in (O, C, k, k)."""
    o, c, k, _ = weight.shape
    b, h, w, _ = x_shape
    ho, wo = h + 2 * padding - k + 1, w + 2 * padding - k + 1
    if grad_out.shape != (b, ho, wo, o):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match forward output {(b, ho, wo, o)}")
    g = grad_out.reshape(-1, o)
    grad_bias = g.sum(axis=0)
    grad_weight = (cols.T @ g).reshape(k, k, c, o).transpose(3, 2, 0, 1)
    if o < c:
        # Few output channels: correlate grad_out with the flipped, transposed
        # kernel instead of materialising column gradients of width k*k*c.
        flipped = np.ascontiguousarray(weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        gx, _ = conv_nhwc_forward(grad_out, flipped, None, k - 1)
    else:
        gcols = (g @ _weight_matrix(weight).T).reshape(b, ho, wo, k, k, c)
        gx = np.zeros((b, ho + k - 1, wo + k - 1, c))
        for i in range(k):
            for j in range(k):
                gx[:, i:i + ho, j:j + wo, :] += gcols[:, :, :, i, j, :]
    if padding:
        gx = gx[:, padding:padding + h, padding:padding + w, :]
    return gx, grad_weight, grad_bias


def conv2d_forward(x, weight, bias=None, padding=0):
    """Cross-correlation of ``x`` (B, C, H, W) with ``weight`` (O, C, k, k), zero padded."""
    if x.ndim != 4:
        raise ShapeError(f"conv input must be (B, C, H, W), got {x.shape}")
    _check_conv(x.shape[1], weight)
    out, _ = conv_nhwc_forward(np.ascontiguousarray(x.transpose(0, 2, 3, 1)), weight, bias, padding)
    return out.transpose(0, 3, 1, 2)


def conv2d_backward(grad_out, x, weight, padding=0):
    """Gradients of :func:`conv2d_forward` w.r.t. input, weight and bias."""
    _check_conv(x.shape[1], weight)
    xn = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    _, cols = conv_nhwc_forward(xn, weight, None, padding)
    gx, gw, gb = conv_nhwc_backward(np.ascontiguousarray(grad_out.transpose(0, 2, 3, 1)), cols,
                                    weight, xn.shape, padding)
    return gx.transpose(0, 3, 1, 2), gw, gb


def relu_forward(x):
    return np.where(x > 0, x, 0.0)


def relu_backward(grad_out, x):
    return np.where(x > 0, grad_out, 0.0)


def prelu_forward(x, slope, channel_axis=1):
    """Parametric ReLU with one slope per channel."""
    a = np.expand_dims(slope, tuple(i for i in range(x.ndim) if i != channel_axis % x.ndim))
    return np.where(x > 0, x, a * x)


def prelu_backward(grad_out, x, slope, channel_axis=1):
    """Returns ``(grad_input, grad_slope)``. The derivative at exactly 0 is taken as 0."""
    axis = channel_axis % x.ndim
    others = tuple(i for i in range(x.ndim) if i != axis)
    a = np.expand_dims(slope, others)
    grad_in = grad_out * np.where(x > 0, 1.0, np.where(x < 0, a, 0.0))
    grad_slope = (np.minimum(x, 0.0) * grad_out).sum(axis=others)
    return grad_in, grad_slope


def pixel_shuffle(x, r):
    """(B, C*r*r, H, W) -> (B, C, H*r, W*r) with out[b, c, h*r+i, w*r+j] = in[b, c*r*r + i*r + j, h, w]."""
    b, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"{c} channels not divisible by r^2={r * r}")
    c_out = c // (r * r)
    return x.reshape(b, c_out, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, c_out, h * r, w * r)


def pixel_unshuffle(x, r):
    """Inverse of :func:`pixel_shuffle`; also its backward pass."""
    b, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(f"spatial dims {(h, w)} not divisible by {r}")
    return x.reshape(b, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(
        b, c * r * r, h // r, w // r)


def pixel_shuffle_nhwc(x, r):
    b, h, w, c = x.shape
    if c % (r * r):
        raise ShapeError(f"{c} channels not divisible by r^2={r * r}")
    c_out = c // (r * r)
    return x.reshape(b, h, w, c_out, r, r).transpose(0, 1, 4, 2, 5, 3).reshape(b, h * r, w * r, c_out)


def pixel_unshuffle_nhwc(x, r):
    b, h, w, c = x.shape
    return x.reshape(b, h // r, r, w // r, r, c).transpose(0, 1, 3, 5, 2, 4).reshape(
        b, h // r, w // r, c * r * r)


def mse_loss(pred, target):
    """Mean squared error and its gradient with respect to ``pred``."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size
