"""Minimal float64 layer stack and the two SR architectures."""

from .layers import Parameter
from .models import (ARCHITECTURES, Model, ModelConfig, load_checkpoint, model_forward,
                     save_checkpoint)
from .ops import (conv2d_backward, conv2d_forward, mse_loss, pixel_shuffle, pixel_unshuffle,
                  prelu_backward, prelu_forward, relu_backward, relu_forward)

__all__ = [
    "ARCHITECTURES", "Model", "ModelConfig", "Parameter", "conv2d_backward", "conv2d_forward",
    "load_checkpoint", "model_forward", "mse_loss", "pixel_shuffle", "pixel_unshuffle",
    "prelu_backward", "prelu_forward", "relu_backward", "relu_forward", "save_checkpoint",
]
