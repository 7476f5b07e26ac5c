"""Backpropagation-family attributions: gradient, guided backprop, SmoothGrad,
integrated gradients, DeepLIFT and LRP."""

from __future__ import annotations

import numpy as np

from ..micronet.network import Network, forward, input_gradient
from ..micronet.relevance import deeplift, lrp
from .base import MethodConfig, MethodId, RawSaliency, as_input, resolve_target, to_map

DEFAULT = MethodConfig()


def _grads(net: Network, xs: np.ndarray, target: int, mode: str = "standard", batch_size: int = 8) -> np.ndarray:
    out = []
    for i in range(0, len(xs), batch_size):
        _, trace = forward(net, xs[i:i + batch_size])
        out.append(input_gradient(net, trace, target, mode))
    return np.concatenate(out)


def explain_gradient(net: Network, x, target=None, cfg: MethodConfig = DEFAULT) -> RawSaliency:
    x = as_input(net, x)
    t = resolve_target(net, x, target)
    g = _grads(net, x[None], t)[0]
    return RawSaliency(np.abs(to_map(g)), MethodId.GRADIENT, t)


def explain_gbp(net: Network, x, target=None, cfg: MethodConfig = DEFAULT) -> RawSaliency:
    x = as_input(net, x)
    t = resolve_target(net, x, target)
    g = _grads(net, x[None], t, "guided")[0]
    return RawSaliency(np.abs(to_map(g)), MethodId.GBP, t)


def explain_smoothgrad(net: Network, x, target=None, cfg: MethodConfig = DEFAULT) -> RawSaliency:
    """Mean absolute gradient over Gaussian-perturbed copies of ``x``."""
    x = as_input(net, x)
    t = resolve_target(net, x, target)
    sigma = cfg.noise_fraction * float(x.max() - x.min())
    rng = np.random.default_rng(cfg.seed)
    noise = rng.standard_normal((cfg.smoothgrad_samples,) + x.shape) * sigma
    xs = (x[None].astype(np.float64) + noise).astype(net.dtype)
    g = np.abs(_grads(net, xs, t, batch_size=cfg.batch_size).astype(np.float64))
    return RawSaliency(to_map(g.mean(axis=0)), MethodId.SMOOTHGRAD, t)


def _baseline(net: Network, x: np.ndarray, cfg: MethodConfig) -> np.ndarray:
    if cfg.baseline is None:
        return np.zeros_like(x)
    return as_input(net, cfg.baseline)


def explain_integrated_gradients(net: Network, x, target=None, cfg: MethodConfig = DEFAULT) -> RawSaliency:
    """Signed path attribution with a right-endpoint Riemann sum of ``cfg.ig_steps`` points."""
    x = as_input(net, x)
    t = resolve_target(net, x, target)
    ref = _baseline(net, x, cfg)
    m = cfg.ig_steps
    alphas = np.arange(1, m + 1, dtype=np.float64) / m
    diff = x.astype(np.float64) - ref
    path = (ref[None] + alphas[:, None, None, None] * diff[None]).astype(net.dtype)
    g = _grads(net, path, t, batch_size=cfg.batch_size).astype(np.float64)
    return RawSaliency(to_map(diff * g.mean(axis=0)), MethodId.INTEGRATED_GRADIENTS, t)


def explain_deeplift_map(net: Network, x, target=None, cfg: MethodConfig = DEFAULT) -> RawSaliency:
    x = as_input(net, x)
    t = resolve_target(net, x, target)
    c = deeplift(net, x, _baseline(net, x, cfg), t)
    return RawSaliency(to_map(c), MethodId.DEEPLIFT, t)


def explain_lrp_map(net: Network, x, target=None, cfg: MethodConfig = DEFAULT) -> RawSaliency:
    x = as_input(net, x)
    t = resolve_target(net, x, target)
    _, trace = forward(net, x)
    return RawSaliency(to_map(lrp(net, trace, t)), MethodId.LRP, t)
