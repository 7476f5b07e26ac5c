"""Shared factories for small random networks and inputs."""

from __future__ import annotations

import numpy as np
import pytest

from txuxi.micronet import Dense, Flatten, Network
from txuxi.micronet.network import init_layers

SMALL_CONV = [("conv", 2, 3, 1, 1), ("relu",), ("maxpool", 2, 2), ("flatten",), ("dense", 6), ("relu",),
              ("dense", 3)]
DEEP_CONV = [("conv", 3, 3, 1, 1), ("relu",), ("maxpool", 2, 2), ("conv", 4, 3, 1, 1), ("relu",),
             ("maxpool", 2, 2), ("flatten",), ("dense", 5), ("relu",), ("dense", 3)]
MLP = [("flatten",), ("dense", 7), ("relu",), ("dense", 5), ("relu",), ("dense", 2)]


def make_net(specs=SMALL_CONV, input_shape=(1, 8, 8), seed=0, dtype=np.float64, bias_scale=0.1,
             head="classification") -> Network:
    """Glorot-initialised network with random (nonzero) biases."""
    rng = np.random.default_rng(seed + 10_000)
    layers = []
    for layer in init_layers(specs, input_shape, seed, dtype):
        if hasattr(layer, "weight"):
            b = (bias_scale * rng.standard_normal(layer.bias.shape)).astype(dtype)
            layer = layer.with_params(layer.weight.astype(dtype), b)
        layers.append(layer)
    return Network(tuple(layers), input_shape, head)


def linear_net(w, b=0.0, dtype=np.float64) -> Network:
    """f(x) = w . x + b on an input shaped like ``w``."""
    w = np.asarray(w, dtype=dtype)
    layer = Dense(w.reshape(1, -1), np.array([b], dtype=dtype))
    return Network((Flatten(), layer), (1,) + w.shape if w.ndim == 2 else w.shape, "regression")


def random_input(shape, seed=0, low=0.0, high=1.0):
    return np.random.default_rng(seed).uniform(low, high, size=shape)


@pytest.fixture
def small_net():
    return make_net()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report one line each at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
