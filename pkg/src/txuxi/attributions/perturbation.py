"""Perturbation-based attributions: LIME, KernelSHAP and RISE.

These methods only query the model, so ``model`` may be a Network or any
callable taking an image batch ``(N, C, H, W)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from math import comb

import numpy as np

from ..micronet.network import Network
from .base import (MethodConfig, MethodId, RawSaliency, as_input, resolve_target, score_fn, segment_grid,
                   upsample)

DEFAULT = MethodConfig()
CONDITION_WARN = 1e8


def _prepare(model, x, target):
    if isinstance(model, Network):
        x = as_input(model, x)
        return x, resolve_target(model, x, target)
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 2:
        x = x[None]
    return x, 0 if target is None else int(target)


def _occlude(x: np.ndarray, keep: np.ndarray, fill: float) -> np.ndarray:
    """Images with the pixels where ``keep`` is 0 replaced by ``fill``."""
    keep = keep[:, None].astype(x.dtype)
    return x[None] * keep + np.asarray(fill, x.dtype) * (1 - keep)


def _scores(score, images_of, n: int, chunk: int = 256) -> np.ndarray:
    return np.concatenate([score(images_of(slice(i, min(i + chunk, n)))) for i in range(0, n, chunk)])


def weighted_ridge(X, y, w, lam: float, intercept: bool = True):
    """Minimize ``sum w (y - b - X c)^2 + lam |c|^2``; returns ``(b, c)``."""
    X = np.asarray(X, dtype=np.float64)
    if intercept:
        X = np.hstack([np.ones((len(X), 1)), X])
    pen = np.full(X.shape[1], lam)
    if intercept:
        pen[0] = 0.0
    xw = X * w[:, None]
    a = X.T @ xw + np.diag(pen)
    rhs = xw.T @ y
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > CONDITION_WARN:
        warnings.warn(f"surrogate design is ill-conditioned (condition number {cond:.3g})", RuntimeWarning,
                      stacklevel=3)
    sol = np.linalg.lstsq(a, rhs, rcond=None)[0]
    return (sol[0], sol[1:]) if intercept else (0.0, sol)


@dataclass(frozen=True)
class SurrogateFit:
    intercept: float
    coef: np.ndarray
    design: np.ndarray
    scores: np.ndarray
    weights: np.ndarray


def lime_fit(model, x, target=None, cfg: MethodConfig = DEFAULT) -> SurrogateFit:
    """Fit the locally weighted linear surrogate over grid segments."""
    x, t = _prepare(model, x, target)
    grid = segment_grid(x.shape[1:], *cfg.grid)
    m = grid.n_segments
    rng = np.random.default_rng(cfg.seed)
    z = (rng.random((cfg.lime_samples, m)) < 0.5).astype(np.float64)
    score = score_fn(model, t, cfg.batch_size)
    y = _scores(score, lambda s: _occlude(x, grid.expand(z[s]), cfg.occlusion_value), len(z))
    width = cfg.kernel_width if cfg.kernel_width is not None else 0.25 * np.sqrt(m)
    dist = (m - z.sum(axis=1)) / m
    w = np.exp(-dist ** 2 / width ** 2)
    b, c = weighted_ridge(z, y, w, cfg.ridge_lambda)
    return SurrogateFit(float(b), c, z, y, w)


def explain_lime(model, x, target=None, cfg: MethodConfig = DEFAULT) -> RawSaliency:
    x, t = _prepare(model, x, target)
    fit = lime_fit(model, x, t, cfg)
    grid = segment_grid(x.shape[1:], *cfg.grid)
    return RawSaliency(grid.expand(fit.coef).astype(np.float64), MethodId.LIME, t)


def shapley_kernel(m: int, size) -> np.ndarray:
    """Kernel weight of a coalition of ``size`` players out of ``m`` (finite sizes only)."""
    size = np.asarray(size)
    return (m - 1) / (np.array([comb(m, int(s)) for s in size.ravel()]).reshape(size.shape)
                      * size * (m - size))


def shap_coalitions(m: int, n_samples: int, rng: np.random.Generator):
    """Coalitions (excluding empty and full) and their regression weights.

    Enumerates every coalition when there are at most ``n_samples`` of them,
    weighting by the Shapley kernel.  Otherwise draws coalition sizes in
    proportion to the kernel's total mass per size, then uniform members,
    so the draws already follow the kernel and carry unit weight.
    """
    if m < 2:
        return np.zeros((0, m)), np.zeros(0)
    if m < 63 and 2 ** m - 2 <= n_samples:
        codes = np.arange(1, 2 ** m - 1)
        z = ((codes[:, None] >> np.arange(m)) & 1).astype(np.float64)
        w = shapley_kernel(m, z.sum(axis=1).astype(int))
        return z, w / w.mean()
    sizes = np.arange(1, m)
    p = (m - 1) / (sizes * (m - sizes))
    drawn = rng.choice(sizes, size=n_samples, p=p / p.sum())
    z = np.zeros((n_samples, m))
    for k, s in enumerate(drawn):
        z[k, rng.permutation(m)[:s]] = 1
    return z, np.ones(n_samples)


def kernel_shap_fit(model, x, target=None, cfg: MethodConfig = DEFAULT) -> SurrogateFit:
    """Shapley-weighted surrogate with intercept = f(all off), intercept + sum = f(all on)."""
    x, t = _prepare(model, x, target)
    grid = segment_grid(x.shape[1:], *cfg.grid)
    m = grid.n_segments
    rng = np.random.default_rng(cfg.seed)
    z, w = shap_coalitions(m, cfg.shap_samples, rng)
    score = score_fn(model, t, cfg.batch_size)
    ends = np.stack([np.ones(m), np.zeros(m)])
    f1, f0 = score(_occlude(x, grid.expand(ends), cfg.occlusion_value))
    if m == 1:
        return SurrogateFit(float(f0), np.array([f1 - f0]), z, np.zeros(0), w)
    y = _scores(score, lambda s: _occlude(x, grid.expand(z[s]), cfg.occlusion_value), len(z))
    # eliminate the last player through the efficiency constraint
    last = z[:, -1:]
    target_y = y - f0 - last[:, 0] * (f1 - f0)
    _, head = weighted_ridge(z[:, :-1] - last, target_y, w, cfg.ridge_lambda, intercept=False)
    phi = np.append(head, (f1 - f0) - head.sum())
    return SurrogateFit(float(f0), phi, z, y, w)


def explain_kernel_shap(model, x, target=None, cfg: MethodConfig = DEFAULT) -> RawSaliency:
    x, t = _prepare(model, x, target)
    fit = kernel_shap_fit(model, x, t, cfg)
    grid = segment_grid(x.shape[1:], *cfg.grid)
    return RawSaliency(grid.expand(fit.coef).astype(np.float64), MethodId.KERNEL_SHAP, t)


def rise_cells(rng: np.random.Generator, n: int, grid, keep_prob: float) -> np.ndarray:
    """Binary low-res grids; every cell is on in exactly round(n * keep_prob) of the n grids.

    Each grid cell is still on with probability keep_prob in any single mask, but balancing
    the on-counts across masks removes most of the Monte-Carlo ripple from the final map.
    """
    gh, gw = grid
    on = int(round(n * keep_prob))
    cells = np.zeros((n, gh * gw))
    cells[:on] = 1.0
    return rng.permuted(cells, axis=0).reshape(n, gh, gw)


def rise_masks(rng: np.random.Generator, cells: np.ndarray, size) -> np.ndarray:
    """Upsample binary grids and crop each at a random sub-cell offset."""
    n, gh, gw = cells.shape
    h, w = size
    ch, cw = -(-h // gh), -(-w // gw)
    big = upsample(cells, ((gh + 1) * ch, (gw + 1) * cw))
    dy = rng.integers(0, ch, size=n)
    dx = rng.integers(0, cw, size=n)
    return np.stack([big[k, dy[k]:dy[k] + h, dx[k]:dx[k] + w] for k in range(n)])


def explain_rise(model, x, target=None, cfg: MethodConfig = DEFAULT, chunk: int = 250) -> RawSaliency:
    """Score-weighted average of random masks, normalized by mask count and keep probability."""
    x, t = _prepare(model, x, target)
    score = score_fn(model, t, cfg.batch_size)
    rng = np.random.default_rng(cfg.seed)
    cells = rise_cells(rng, cfg.rise_masks, cfg.rise_grid, cfg.keep_prob)
    total = np.zeros(x.shape[1:])
    for start in range(0, cfg.rise_masks, chunk):
        masks = rise_masks(rng, cells[start:start + chunk], x.shape[1:])
        s = score((x[None] * masks[:, None]).astype(x.dtype))
        total += np.tensordot(s, masks, axes=1)
    return RawSaliency(total / (cfg.rise_masks * cfg.keep_prob), MethodId.RISE, t)
