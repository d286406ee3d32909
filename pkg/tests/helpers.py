"""Shared oracles for the test-suite."""

import numpy as np

from emisr.nn import Model, ModelConfig
from emisr.nn.layers import PReLU, ReLU

FD_STEP = 1e-5
REL_FLOOR = 1e-6


def rel_error(analytic, numeric, floor=REL_FLOOR):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def central_difference(f, x, h=FD_STEP):
    """d f / d x for scalar ``f`` of array ``x`` (perturbed in place, then restored)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def _activation_layers(layer):
    if isinstance(layer, (ReLU, PReLU)):
        yield layer
    for child in getattr(layer, "layers", []):
        yield from _activation_layers(child)
    body = getattr(layer, "body", None)
    if body is not None:
        yield from _activation_layers(body)


def kink_margin(model):
    """Smallest |input| seen by any activation in the last forward pass."""
    return min(float(np.abs(a._x).min()) for a in _activation_layers(model.net))


def toy_problem(config: ModelConfig, lr_size, margin=1e-4, max_tries=200):
    """Seeded model, input and output weighting with every activation input at least
    ``margin`` away from the kink at 0, so central differences never straddle it.

    Parameters are jittered off their initial values so that zero biases and
    the 0.1-scaled output layers do not hide errors.
    """
    for seed in range(max_tries):
        rng = np.random.default_rng(seed)
        model = Model(ModelConfig(**{**config.__dict__, "init_seed": seed}))
        for p in model.parameters():
            p.value[...] += rng.normal(0.0, 0.1, p.value.shape)
        x = rng.random((1, 1, lr_size, lr_size))
        y = model.forward(x)
        if kink_margin(model) >= margin:
            return model, x, rng.standard_normal(y.shape)
    raise RuntimeError("no kink-free toy problem found")


def model_gradient_errors(model, x, weight):
    """Worst relative error of analytic vs central-difference gradients, per parameter."""
    model.zero_grad()
    model.forward(x)
    model.backward(weight)
    worst = {}
    for name, p in model.named_parameters().items():
        numeric = central_difference(lambda: float((model.forward(x) * weight).sum()), p.value)
        worst[name] = float(rel_error(p.grad, numeric).max())
    return worst
