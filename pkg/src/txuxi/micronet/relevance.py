"""Relevance propagation (epsilon rule) and DeepLIFT (Rescale rule).

Both passes run in float64 so that the conservation and summation-to-delta
properties are limited by the rules themselves, not by float32 rounding.
"""

from __future__ import annotations

import numpy as np

from ..errors import InputShapeError
from .layers import PARAMETRIC, Flatten, MaxPool2D, ReLU
from .network import Network, _as_batch, _selector_grad, check_trace, forward

LRP_EPSILON = 1e-6
RESCALE_EPS = 1e-7


def _stabilize(z: np.ndarray, eps: float) -> np.ndarray:
    return z + eps * np.where(z >= 0, 1.0, -1.0)


def _incidence(layer) -> object:
    """Same-geometry layer with all-ones weights and no bias (receptive-field sums)."""
    w = np.ones_like(layer.weight, dtype=np.float64)
    return layer.with_params(w, np.zeros(w.shape[0]))


def _square_rule(layer, r: np.ndarray, in_shape) -> np.ndarray:
    """Distribute relevance in proportion to squared weights (input-independent)."""
    sq = layer.with_params(layer.weight.astype(np.float64) ** 2, np.zeros_like(layer.bias, dtype=np.float64))
    ones = np.ones((1,) + tuple(in_shape[1:]))
    denom = sq.linear(ones)
    s = np.divide(r, denom, out=np.zeros_like(r), where=denom > 0)
    return sq.backward_input(s, in_shape)


def _epsilon_rule(layer, a: np.ndarray, r: np.ndarray, eps: float) -> np.ndarray:
    """Epsilon rule with the bias share handed back to the inputs.

    The stabilized ratio ``s = R / (z + eps * sign(z))`` uses the full
    pre-activation including the bias.  Inputs receive ``a * W^T s`` as
    usual; the bias part ``b * s`` of each unit is then split over its
    receptive field in proportion to ``|a|`` (uniformly when every input is
    zero), so only the epsilon term leaks.  Units with ``|z| <= eps`` pass
    their relevance on by the squared-weight rule.
    """
    z = layer.forward(a)
    flat = np.abs(z) <= eps
    s = np.where(flat, 0.0, r / _stabilize(z, eps))
    out = a * layer.backward_input(s, a.shape)
    bias = layer.bias.reshape((-1,) + (1,) * (z.ndim - 2))
    share = bias * s
    if np.any(share):
        inc = _incidence(layer)
        mag = np.abs(a)
        total = inc.linear(mag)
        dead = total <= 0
        prop = np.divide(share, total, out=np.zeros_like(share), where=~dead)
        out += mag * inc.backward_input(prop, a.shape)
        if dead.any():
            counts = inc.linear(np.ones((1,) + a.shape[1:]))
            out += inc.backward_input(np.where(dead, share / counts, 0.0), a.shape)
    if flat.any():
        out += _square_rule(layer, np.where(flat, r, 0.0), a.shape)
    return out


def lrp_layers(net: Network, trace, target=None, eps: float = LRP_EPSILON) -> list[np.ndarray]:
    """Relevance at the input of every layer, from the output down to the image.

    Element ``k`` of the result is the relevance entering layer
    ``len(layers) - 1 - k``; the last element is the input relevance.
    Relevance starts as the selected pre-softmax score.  Linear layers use
    the epsilon rule (see :func:`_epsilon_rule`), ReLUs pass relevance
    through and max-pools route it to the window winner.
    """
    check_trace(net, trace)
    net64 = net.astype(np.float64)
    acts = [a.astype(np.float64) for a in trace.activations]
    seed = _selector_grad(net, len(acts[-1]), target, np.float64)
    r = seed * acts[-1]
    out = [r]
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net64.layers[i]
        a = acts[i]
        if isinstance(layer, PARAMETRIC):
            r = _epsilon_rule(layer, a, r, eps)
        elif isinstance(layer, MaxPool2D):
            r = layer.route(r, trace.winners[i], a.shape)
        elif isinstance(layer, Flatten):
            r = r.reshape(a.shape)
        elif not isinstance(layer, ReLU):
            raise TypeError(f"no relevance rule for {layer!r}")
        out.append(r)
    return out


def lrp(net: Network, trace, target=None, eps: float = LRP_EPSILON) -> np.ndarray:
    """Per-input relevance whose sum approximates the selected logit."""
    r = lrp_layers(net, trace, target, eps)[-1]
    return r if trace.batched else r[0]


def _pool_multipliers(layer: MaxPool2D, m_out, y, y_ref, win, win_ref, x, x_ref, eps):
    """Rescale multipliers for a max-pool.

    With ``a`` the window winner under the input and ``b`` the winner under
    the baseline, the output delta satisfies ``d_b <= dy <= d_a``.  The whole
    window contribution ``m_out * dy`` is routed to whichever of the two has
    the larger input delta, with multiplier ``dy / d``, so the multiplier
    never exceeds ``m_out`` in magnitude and summation-to-delta is exact.
    Windows where both deltas are below ``eps`` fall back to the gradient.
    """
    shape = x.shape
    k, s = layer.kernel, layer.stride
    _, _, ho, wo = y.shape
    rows0 = np.arange(ho)[:, None] * s
    cols0 = np.arange(wo)[None, :] * s
    ni = np.arange(shape[0])[:, None, None, None]
    ci = np.arange(shape[1])[None, :, None, None]
    delta = x - x_ref

    def delta_at(w):
        return delta[ni, ci, rows0 + w // k, cols0 + w % k]

    da, db = delta_at(win), delta_at(win_ref)
    use_b = np.abs(db) > np.abs(da)
    chosen = np.where(use_b, win_ref, win)
    d = np.where(use_b, db, da)
    ok = np.abs(d) >= eps
    ratio = np.divide(y - y_ref, d, out=np.ones_like(d), where=ok)
    return layer.route(m_out * ratio, chosen.astype(win.dtype), shape)


def deeplift_multipliers(net: Network, x, baseline, target=None, eps: float = RESCALE_EPS) -> np.ndarray:
    """Multipliers of the selected logit w.r.t. the input under the Rescale rule."""
    xb, batched = _as_batch(net, x)
    rb, _ = _as_batch(net, baseline)
    if rb.shape[0] == 1 and xb.shape[0] > 1:
        rb = np.repeat(rb, xb.shape[0], axis=0)
    if rb.shape != xb.shape:
        raise InputShapeError(f"baseline shape {rb.shape} does not match input {xb.shape}")
    net64 = net.astype(np.float64)
    _, tr = forward(net64, xb.astype(np.float64))
    _, tr_ref = forward(net64, rb.astype(np.float64))
    acts, acts_ref = tr.activations, tr_ref.activations
    m = _selector_grad(net, len(xb), target, np.float64)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net64.layers[i]
        a, a_ref = acts[i], acts_ref[i]
        if isinstance(layer, PARAMETRIC):
            m = layer.backward_input(m, a.shape)
        elif isinstance(layer, ReLU):
            d_in = a - a_ref
            d_out = acts[i + 1] - acts_ref[i + 1]
            ok = np.abs(d_in) >= eps
            slope = np.divide(d_out, d_in, out=np.zeros_like(d_in), where=ok)
            m = m * np.where(ok, slope, (a > 0).astype(np.float64))
        elif isinstance(layer, MaxPool2D):
            m = _pool_multipliers(layer, m, acts[i + 1], acts_ref[i + 1], tr.winners[i], tr_ref.winners[i],
                                  a, a_ref, eps)
        elif isinstance(layer, Flatten):
            m = m.reshape(a.shape)
        else:
            raise TypeError(f"no DeepLIFT rule for {layer!r}")
    return m if batched else m[0]


def deeplift(net: Network, x, baseline, target=None, eps: float = RESCALE_EPS) -> np.ndarray:
    """Per-input contributions ``multiplier * (x - baseline)``.

    They sum to ``f(x) - f(baseline)`` for the selected logit.
    """
    xb, batched = _as_batch(net, x)
    rb, _ = _as_batch(net, baseline)
    m = deeplift_multipliers(net, xb, rb, target, eps)
    c = m * (xb.astype(np.float64) - rb.astype(np.float64))
    return c if batched else c[0]
