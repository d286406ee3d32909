"""Layers with cached forward state and explicit backward passes.

Activations flow through the network channels-last, (B, H, W, C).

A layer's ``forward`` stores whatever its ``backward`` needs; ``backward``
accumulates parameter gradients into ``Parameter.grad`` and returns the
gradient with respect to the layer input. Layers are not re-entrant: call
``backward`` once per ``forward``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..resample import resample_matrix
from . import ops


@dataclass(eq=False)
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0


class Layer:
    def parameters(self) -> list:
        return []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, name, in_ch, out_ch, kernel, rng, gain=1.0):
        fan_in = in_ch * kernel * kernel
        std = np.sqrt(2.0 / fan_in) * gain
        self.weight = Parameter(f"{name}.weight", rng.normal(0.0, std, (out_ch, in_ch, kernel, kernel)))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_ch))
        self.padding = (kernel - 1) // 2
        self._x = None

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x):
        out, self._cols = ops.conv_nhwc_forward(x, self.weight.value, self.bias.value, self.padding)
        self._shape = x.shape
        return out

    def backward(self, grad):
        gx, gw, gb = ops.conv_nhwc_backward(grad, self._cols, self.weight.value, self._shape,
                                            self.padding)
        self._cols = None
        self.weight.grad += gw
        self.bias.grad += gb
        return gx


class ReLU(Layer):
    def forward(self, x):
        self._x = x
        return ops.relu_forward(x)

    def backward(self, grad):
        return ops.relu_backward(grad, self._x)


class PReLU(Layer):
    def __init__(self, name, channels, init=0.25):
        self.slope = Parameter(f"{name}.slope", np.full(channels, init))

    def parameters(self):
        return [self.slope]

    def forward(self, x):
        self._x = x
        return ops.prelu_forward(x, self.slope.value, channel_axis=-1)

    def backward(self, grad):
        gx, ga = ops.prelu_backward(grad, self._x, self.slope.value, channel_axis=-1)
        self.slope.grad += ga
        return gx


def activation(kind, name, channels) -> Layer:
    if kind == "relu":
        return ReLU()
    if kind == "prelu":
        return PReLU(name, channels)
    raise ValueError(f"unknown activation {kind!r}")


class PixelShuffle(Layer):
    def __init__(self, r):
        self.r = r

    def forward(self, x):
        return ops.pixel_shuffle_nhwc(x, self.r)

    def backward(self, grad):
        return ops.pixel_unshuffle_nhwc(grad, self.r)


class BicubicUpsample(Layer):
    """Fixed (parameter-free) bicubic upsampling by an integer factor."""

    def __init__(self, factor):
        self.factor = factor

    def _mats(self, h, w):
        return (resample_matrix(h, h * self.factor), resample_matrix(w, w * self.factor))

    def forward(self, x):
        self._shape = x.shape
        rows, cols = self._mats(*x.shape[1:3])
        return np.einsum("ih,bhwc,jw->bijc", rows, x, cols, optimize=True)

    def backward(self, grad):
        rows, cols = self._mats(*self._shape[1:3])
        return np.einsum("ih,bijc,jw->bhwc", rows, grad, cols, optimize=True)


class Sequential(Layer):
    def __init__(self, *layers):
        self.layers = list(layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


class ResidualBlock(Layer):
    """x + conv(act(conv(x)))."""

    def __init__(self, name, width, act, rng):
        self.body = Sequential(
            Conv2d(f"{name}.conv1", width, width, 3, rng),
            activation(act, f"{name}.act", width),
            Conv2d(f"{name}.conv2", width, width, 3, rng, gain=0.1),
        )

    def parameters(self):
        return self.body.parameters()

    def forward(self, x):
        return x + self.body.forward(x)

    def backward(self, grad):
        return grad + self.body.backward(grad)
