"""Probability maps, pooling, ground distances and the MIN similarity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DegenerateMapError, PreconditionError

MASS_TOL = 1e-6


def normalize(m) -> np.ndarray:
    """Scale a nonnegative map to unit total mass (float64)."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise PreconditionError(f"expected a 2-D map, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise PreconditionError("map contains non-finite values")
    if (m < 0).any():
        raise PreconditionError("map contains negative values")
    total = m.sum()
    if total <= 0:
        raise DegenerateMapError("map has zero total mass")
    return m / total


def check_prob(p, name: str = "map") -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or (p < 0).any() or abs(p.sum() - 1.0) > MASS_TOL:
        raise PreconditionError(f"{name} is not a normalized 2-D distribution")
    return p


def downsample(p, target=(16, 16)) -> np.ndarray:
    """Sum-pool blocks of ``p`` down to ``target`` cells and renormalize."""
    p = np.asarray(p, dtype=np.float64)
    th, tw = (target, target) if np.isscalar(target) else target
    h, w = p.shape
    if h % th or w % tw:
        raise ConfigurationError(f"{h}x{w} map is not divisible into {th}x{tw} cells")
    pooled = p.reshape(th, h // th, tw, w // tw).sum(axis=(1, 3))
    total = pooled.sum()
    if total <= 0:
        raise DegenerateMapError("map has zero total mass")
    return pooled / total


@dataclass(frozen=True)
class GroundDistance:
    """Euclidean distance between cell centers divided by the grid diagonal."""

    shape: tuple

    @property
    def diagonal(self) -> float:
        h, w = self.shape
        return float(np.hypot(h - 1, w - 1))

    def coords(self) -> np.ndarray:
        h, w = self.shape
        rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        return np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.float64)

    def matrix(self, rows=None, cols=None) -> np.ndarray:
        """Pairwise distances between flat cell indices ``rows`` and ``cols``."""
        xy = self.coords()
        a = xy if rows is None else xy[rows]
        b = xy if cols is None else xy[cols]
        d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
        diag = self.diagonal
        return d / diag if diag > 0 else d


def min_similarity(p, q) -> float:
    """Histogram intersection: sum over cells of min(p, q)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise PreconditionError(f"shape mismatch {p.shape} vs {q.shape}")
    check_prob(p, "p")
    check_prob(q, "q")
    return float(np.minimum(p, q).sum())
