"""Deterministic mini-batch SGD."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import EmptyInputError, LabelError
from .network import Network, backward_params, forward, predict_logits

log = logging.getLogger(__name__)

LOSSES = ("mse", "cross-entropy")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    loss: str = "cross-entropy"
    momentum: float = 0.9
    weight_decay: float = 0.0
    augment: bool = False
    schedule: str = "constant"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def rate(self, epoch: int) -> float:
        if self.schedule == "cosine":
            return 0.5 * self.learning_rate * (1 + np.cos(np.pi * epoch / self.epochs))
        return self.learning_rate


def loss_and_grad(net: Network, logits: np.ndarray, y: np.ndarray, loss: str):
    """Mean loss over the batch and its gradient w.r.t. the logits."""
    n = len(logits)
    if loss == "mse":
        diff = logits - y.reshape(logits.shape).astype(logits.dtype)
        return float(np.mean(np.sum(diff.astype(np.float64) ** 2, axis=1))), (2.0 / n) * diff
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    idx = np.arange(n)
    value = -float(np.mean(logp[idx, y].astype(np.float64)))
    grad = np.exp(logp)
    grad[idx, y] -= 1
    return value, grad / n


def _check_labels(net: Network, labels, loss: str) -> np.ndarray:
    y = np.asarray(labels)
    if loss == "cross-entropy":
        if net.head != "classification":
            raise LabelError("cross-entropy needs a classification head")
        if y.dtype.kind == "f":
            if not np.all(y == np.round(y)):
                raise LabelError("classification labels must be integers")
            y = y.astype(np.int64)
        if y.dtype.kind not in "iu" or (y < 0).any() or (y >= net.n_outputs).any():
            raise LabelError(f"class labels must lie in [0, {net.n_outputs})")
        return y.astype(np.int64)
    if net.n_outputs != 1:
        raise LabelError("mse training expects a single-output network")
    return y.astype(net.dtype).reshape(-1, 1)


def _dihedral(xb: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Apply one random symmetry of the square to each image."""
    coins = rng.random((len(xb), 3)) < 0.5
    out = xb.copy()
    out[coins[:, 0]] = out[coins[:, 0]][..., ::-1]
    out[coins[:, 1]] = out[coins[:, 1]][..., ::-1, :]
    if xb.shape[-1] == xb.shape[-2]:
        out[coins[:, 2]] = np.swapaxes(out[coins[:, 2]], -1, -2)
    return out


def _shift(xb: np.ndarray, extents: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Roll each image by a random offset that keeps its foreground box inside the frame.

    ``extents`` rows are ``(r0, r1, c0, c1)``, inclusive bounds of the pixels
    that must not wrap around the border.
    """
    h, w = xb.shape[-2:]
    out = np.empty_like(xb)
    for k, (img, (r0, r1, c0, c1)) in enumerate(zip(xb, extents)):
        dy = rng.integers(-r0, h - r1)
        dx = rng.integers(-c0, w - c1)
        out[k] = np.roll(img, (int(dy), int(dx)), axis=(-2, -1))
    return out


def _extents(support: np.ndarray) -> np.ndarray:
    rows = np.flatnonzero(support.any(axis=1))
    cols = np.flatnonzero(support.any(axis=0))
    if rows.size == 0:
        return np.array([0, support.shape[0] - 1, 0, support.shape[1] - 1])
    return np.array([rows[0], rows[-1], cols[0], cols[-1]])


def train(net: Network, samples, cfg: TrainConfig, on_epoch=None) -> tuple[Network, list[float]]:
    """Train a copy of ``net`` on ``(image, label)`` pairs.

    A sample may carry a third item, a 2-D foreground mask.  With
    ``cfg.augment`` each batch gets random flips and transposes, and samples
    with a mask are also shifted by offsets that keep the foreground whole.

    The shuffle order is drawn from ``cfg.seed``; with equal inputs the final
    weights are bitwise reproducible.  Returns the trained network and the
    per-epoch mean training loss.  ``on_epoch(epoch, net, loss)`` is called
    after every epoch when given.
    """
    samples = list(samples)
    if not samples:
        raise EmptyInputError("cannot train on an empty dataset")
    x = np.stack([np.asarray(s[0], dtype=net.dtype).reshape(net.input_shape) for s in samples])
    y = _check_labels(net, [s[1] for s in samples], cfg.loss)
    spatial = len(net.input_shape) == 3
    if spatial:
        h, w = net.input_shape[-2:]
        extents = np.array([_extents(np.asarray(s[2]) > 0) if len(s) > 2 and s[2] is not None
                            else (0, h - 1, 0, w - 1) for s in samples])
    params = [(w.copy(), b.copy()) for w, b in net.params()]
    velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
    rng = np.random.default_rng(cfg.seed)
    mu = net.dtype.type(cfg.momentum)
    wd = net.dtype.type(cfg.weight_decay)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x))
        lr = net.dtype.type(cfg.rate(epoch))
        total = 0.0
        current = net.with_params(params)
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = x[idx]
            if cfg.augment and spatial:
                xb = _dihedral(_shift(xb, extents[idx], rng), rng)
            _, trace = forward(current, xb)
            value, g = loss_and_grad(current, trace.logits, y[idx], cfg.loss)
            total += value * len(idx)
            grads = backward_params(current, trace, g)
            for (w, b), (vw, vb), (gw, gb) in zip(params, velocity, grads):
                if wd:
                    gw = gw + wd * w
                vw *= mu
                vw -= lr * gw
                vb *= mu
                vb -= lr * gb
                w += vw
                b += vb
        history.append(total / len(x))
        log.debug("epoch %d loss %.5f", epoch + 1, history[-1])
        if on_epoch is not None:
            on_epoch(epoch + 1, net.with_params(params), history[-1])
    return net.with_params(params), history


def evaluate(net: Network, samples) -> dict:
    """Accuracy (classification) or R^2 (regression) on held-out samples."""
    samples = list(samples)
    if not samples:
        raise EmptyInputError("no samples to evaluate")
    x = np.stack([np.asarray(s[0], dtype=net.dtype).reshape(net.input_shape) for s in samples])
    logits = predict_logits(net, x)
    if net.head == "classification":
        y = np.asarray([int(s[1]) for s in samples])
        return {"accuracy": float(np.mean(logits.argmax(axis=1) == y)), "n": len(y)}
    y = np.asarray([float(s[1]) for s in samples])
    pred = logits[:, 0].astype(np.float64)
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return {"r2": 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan"), "n": len(y)}
