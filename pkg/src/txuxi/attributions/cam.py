"""Activation-map methods: GradCAM, GradCAM++, ScoreCAM and SIDU.

All of them read the stack of spatial maps ``A_k`` produced by one
convolution layer (by default the last one), taken after its ReLU when one
follows, and upsample a weighted combination to input size.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from ..micronet.layers import Conv2D, ReLU
from ..micronet.network import Network, _selector_grad, backward, forward
from .base import (MethodConfig, MethodId, RawSaliency, as_input, default_cam_layer, output_fn, resolve_target,
                   score_fn, upsample)

DEFAULT = MethodConfig()


def _layer(net: Network, cfg: MethodConfig) -> int:
    """Index of the layer whose output holds the maps: the conv or its ReLU."""
    idx = default_cam_layer(net) if cfg.cam_layer is None else cfg.cam_layer
    if not 0 <= idx < len(net.layers) or not isinstance(net.layers[idx], Conv2D):
        raise ConfigurationError(f"layer {idx} is not a convolution layer")
    if idx + 1 < len(net.layers) and isinstance(net.layers[idx + 1], ReLU):
        idx += 1
    return idx


def activations_and_grads(net: Network, x, target: int, layer: int):
    """Maps ``A`` (K, h, w) at the output of ``layer`` and d(score)/dA."""
    _, trace = forward(net, x)
    seed = _selector_grad(net, 1, target, trace.logits.dtype)
    g = backward(net, trace, seed, stop=layer + 1)
    return trace.activations[layer + 1][0].astype(np.float64), g[0].astype(np.float64)


def _finish(cam: np.ndarray, size, method: MethodId, target: int) -> RawSaliency:
    up = upsample(np.maximum(cam, 0), size)
    return RawSaliency(np.maximum(up, 0), method, target)


def explain_gradcam(net: Network, x, target=None, cfg: MethodConfig = DEFAULT) -> RawSaliency:
    x = as_input(net, x)
    t = resolve_target(net, x, target)
    a, g = activations_and_grads(net, x, t, _layer(net, cfg))
    alpha = g.mean(axis=(1, 2))
    return _finish(np.tensordot(alpha, a, axes=1), x.shape[1:], MethodId.GRADCAM, t)


def gradcampp_weights(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Per-map weights from first derivatives only.

    With ``Y = exp(score)`` and a piecewise-linear network, the n-th
    derivative of Y is ``Y * g**n``; the common factor Y cancels inside the
    pixel coefficients and is dropped from the final weights, where it is a
    positive scalar that rescales the whole map.
    """
    g2, g3 = g ** 2, g ** 3
    denom = 2 * g2 + a.sum(axis=(1, 2), keepdims=True) * g3
    coeff = np.divide(g2, denom, out=np.zeros_like(g), where=denom != 0)
    return (coeff * np.maximum(g, 0)).sum(axis=(1, 2))


def explain_gradcampp(net: Network, x, target=None, cfg: MethodConfig = DEFAULT) -> RawSaliency:
    x = as_input(net, x)
    t = resolve_target(net, x, target)
    a, g = activations_and_grads(net, x, t, _layer(net, cfg))
    w = gradcampp_weights(a, g)
    return _finish(np.tensordot(w, a, axes=1), x.shape[1:], MethodId.GRADCAMPP, t)


def _minmax(a: np.ndarray):
    """Per-map min-max scaling; constant maps come back all-zero and flagged."""
    lo = a.min(axis=(1, 2), keepdims=True)
    span = a.max(axis=(1, 2), keepdims=True) - lo
    varying = span[:, 0, 0] > 0
    scaled = np.divide(a - lo, span, out=np.zeros_like(a), where=span > 0)
    return scaled, varying


def scorecam_weights(scores: np.ndarray, varying: np.ndarray) -> np.ndarray:
    """Softmax of the score increases over the non-constant maps (others get 0)."""
    w = np.zeros(len(scores))
    if varying.any():
        c = scores[varying]
        e = np.exp(c - c.max())
        w[varying] = e / e.sum()
    return w


def explain_scorecam(net: Network, x, target=None, cfg: MethodConfig = DEFAULT) -> RawSaliency:
    x = as_input(net, x)
    t = resolve_target(net, x, target)
    layer = _layer(net, cfg)
    a, _ = activations_and_grads(net, x, t, layer)
    scaled, varying = _minmax(a)
    masks = upsample(scaled, x.shape[1:])
    score = score_fn(net, t, cfg.batch_size)
    masked = (x[None] * masks[:, None]).astype(x.dtype)
    base = score(np.zeros_like(x)[None])[0]
    c = score(masked) - base
    w = scorecam_weights(c, varying)
    return _finish(np.tensordot(w, a, axes=1), x.shape[1:], MethodId.SCORECAM, t)


def sidu_map(masks: np.ndarray, outputs: np.ndarray, reference: np.ndarray, sigma: float) -> np.ndarray:
    """Combine masks by similarity-difference times uniqueness, averaged over maps.

    ``outputs`` holds one prediction vector per mask, ``reference`` the
    prediction on the unperturbed input.
    """
    sd = np.exp(-((outputs - reference) ** 2).sum(axis=1) / (2 * sigma ** 2))
    pair = np.sqrt(((outputs[:, None, :] - outputs[None, :, :]) ** 2).sum(axis=-1))
    uniq = pair.sum(axis=1)
    return np.tensordot(sd * uniq, masks, axes=1) / len(masks)


def explain_sidu(net: Network, x, target=None, cfg: MethodConfig = DEFAULT) -> RawSaliency:
    x = as_input(net, x)
    t = resolve_target(net, x, target)
    a, _ = activations_and_grads(net, x, t, _layer(net, cfg))
    scaled, _ = _minmax(a)
    masks = upsample((scaled > cfg.sidu_threshold).astype(np.float64), x.shape[1:])
    out = output_fn(net, cfg.batch_size)
    outputs = out((x[None] * masks[:, None]).astype(x.dtype))
    ref = out(x[None])[0]
    m = sidu_map(masks, outputs, ref, cfg.sidu_sigma)
    return RawSaliency(np.maximum(m, 0), MethodId.SIDU, t)
