"""SR architectures and the EMW1 checkpoint format.

``srcnn_t``: bicubic pre-upsampling followed by three convolutions.
``resnet_t``: residual body at LR size, pixel-shuffle x2 stages, and a global
bicubic skip so the network only learns a correction to bicubic upsampling.

Both map a (B, 1, M, N) batch of transformed LR patches to (B, 1, aM, aN).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError, FormatError, IoError, ShapeError
from .layers import (BicubicUpsample, Conv2d, PixelShuffle, ResidualBlock, Sequential,
                     activation)

ARCHITECTURES = ("srcnn_t", "resnet_t")
EMW1_MAGIC = b"EMW1"


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "resnet_t"
    alpha: int = 4
    srcnn_kernels: tuple = (9, 1, 5)
    srcnn_widths: tuple = (64, 32)
    n_residual_blocks: int = 4
    base_width: int = 32
    activation: str = "prelu"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "srcnn_kernels", tuple(int(k) for k in self.srcnn_kernels))
        object.__setattr__(self, "srcnn_widths", tuple(int(k) for k in self.srcnn_widths))
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}", "architecture")
        if self.alpha not in (2, 4):
            raise ConfigError(f"alpha must be 2 or 4, got {self.alpha}", "alpha")
        if len(self.srcnn_kernels) != 3 or any(k < 1 or k % 2 == 0 for k in self.srcnn_kernels):
            raise ConfigError(f"srcnn kernels must be three odd sizes, got {self.srcnn_kernels}",
                              "srcnn_kernels")
        if len(self.srcnn_widths) != 2 or min(self.srcnn_widths) < 1:
            raise ConfigError(f"srcnn widths must be two positive ints, got {self.srcnn_widths}",
                              "srcnn_widths")
        if self.base_width < 1 or self.n_residual_blocks < 0:
            raise ConfigError("resnet width must be >= 1 and block count >= 0", "base_width")
        if self.activation not in ("relu", "prelu"):
            raise ConfigError(f"unknown activation {self.activation!r}", "activation")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


def _build_srcnn(cfg: ModelConfig, rng):
    k1, k2, k3 = cfg.srcnn_kernels
    f1, f2 = cfg.srcnn_widths
    act = cfg.activation
    return Sequential(
        BicubicUpsample(cfg.alpha),
        Conv2d("conv1", 1, f1, k1, rng),
        activation(act, "act1", f1),
        Conv2d("conv2", f1, f2, k2, rng),
        activation(act, "act2", f2),
        Conv2d("conv3", f2, 1, k3, rng, gain=0.1),
    )


class _ResNetT(Sequential):
    def __init__(self, cfg: ModelConfig, rng):
        nf, act = cfg.base_width, cfg.activation
        layers = [Conv2d("head", 1, nf, 3, rng), activation(act, "head.act", nf)]
        layers += [ResidualBlock(f"block{i}", nf, act, rng) for i in range(cfg.n_residual_blocks)]
        for s in range(cfg.alpha.bit_length() - 1):
            layers += [Conv2d(f"up{s}", nf, 4 * nf, 3, rng), PixelShuffle(2),
                       activation(act, f"up{s}.act", nf)]
        layers.append(Conv2d("tail", nf, 1, 3, rng, gain=0.1))
        super().__init__(*layers)
        self.skip = BicubicUpsample(cfg.alpha)

    def forward(self, x):
        return super().forward(x) + self.skip.forward(x)

    def backward(self, grad):
        return super().backward(grad) + self.skip.backward(grad)


class Model:
    """A network plus its configuration; parameters are addressable by name."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.init_seed)
        if config.architecture == "srcnn_t":
            self.net = _build_srcnn(config, rng)
        else:
            self.net = _ResNetT(config, rng)
        self.mode = "train"

    @property
    def alpha(self) -> int:
        return self.config.alpha

    def parameters(self) -> list:
        return self.net.parameters()

    def named_parameters(self) -> dict:
        return {p.name: p for p in self.parameters()}

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"model input must be (B, 1, H, W), got {x.shape}")
        out = self.net.forward(x.transpose(0, 2, 3, 1))
        return out.transpose(0, 3, 1, 2)

    def backward(self, grad):
        """Backpropagate ``grad`` (B, 1, aH, aW); returns the input gradient in the same layout."""
        gx = self.net.backward(np.asarray(grad).transpose(0, 2, 3, 1))
        return gx.transpose(0, 3, 1, 2)

    def state(self) -> dict:
        return {name: p.value.copy() for name, p in self.named_parameters().items()}

    def load_state(self, state: dict):
        params = self.named_parameters()
        if set(state) != set(params):
            raise ShapeError(f"state keys do not match model parameters: {sorted(set(state) ^ set(params))}")
        for name, value in state.items():
            if params[name].value.shape != np.shape(value):
                raise ShapeError(f"{name}: shape {np.shape(value)} != {params[name].value.shape}")
            params[name].value[...] = value

    def copy(self) -> "Model":
        other = Model(self.config)
        other.load_state(self.state())
        return other


def model_forward(model: Model, batch) -> np.ndarray:
    """Run ``model`` on a transformed LR batch (B, 1, M, N) or a single (M, N) patch."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[:, None]
    return model.forward(x)


def save_checkpoint(model: Model, path) -> None:
    cfg = model.config.to_json().encode("utf-8")
    chunks = [EMW1_MAGIC, struct.pack("<I", len(cfg)), cfg]
    params = model.named_parameters()
    chunks.append(struct.pack("<I", len(params)))
    for name, p in params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", p.value.ndim) + struct.pack(f"<{p.value.ndim}I", *p.value.shape))
        chunks.append(p.value.astype("<f8").tobytes())
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(chunks))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> Model:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:4] != EMW1_MAGIC:
        raise FormatError(f"{path}: not an EMW1 checkpoint")
    try:
        pos = 4
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        model = Model(ModelConfig.from_json(data[pos:pos + n].decode("utf-8")))
        pos += n
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        state = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + ln].decode("utf-8")
            pos += ln
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(dims)) * 8
            state[name] = np.frombuffer(data, "<f8", count=size // 8, offset=pos).reshape(dims)
            pos += size
    except (struct.error, ValueError, UnicodeDecodeError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint ({exc})") from exc
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    model.load_state(state)
    return model
