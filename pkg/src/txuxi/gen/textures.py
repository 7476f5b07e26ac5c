"""Background texture pools: image directories or seeded value noise."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ConfigurationError

TEXTURE_MAX = 0.6
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".gif"}
FALLBACK_SIZE = 64
FALLBACK_SEED = 20240


def _minmax(a: np.ndarray, top: float = TEXTURE_MAX) -> np.ndarray:
    lo, hi = float(a.min()), float(a.max())
    if hi - lo < 1e-12:
        return np.zeros_like(a, dtype=np.float32)
    return ((a - lo) / (hi - lo) * top).astype(np.float32)


def load_texture(path, size: int = 64) -> np.ndarray:
    """Grayscale, center-cropped, resized to ``size``, scaled to [0, 0.6]."""
    with Image.open(path) as im:
        im = im.convert("L")
        w, h = im.size
        side = min(w, h)
        left, top = (w - side) // 2, (h - side) // 2
        im = im.crop((left, top, left + side, top + side)).resize((size, size), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return _minmax(arr)


def _bilinear_grid(grid: np.ndarray, size: int) -> np.ndarray:
    gy, gx = grid.shape
    ys = np.linspace(0, gy - 1, size)
    xs = np.linspace(0, gx - 1, size)
    y0 = np.clip(np.floor(ys).astype(int), 0, gy - 2)
    x0 = np.clip(np.floor(xs).astype(int), 0, gx - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    g00 = grid[y0][:, x0]
    g01 = grid[y0][:, x0 + 1]
    g10 = grid[y0 + 1][:, x0]
    g11 = grid[y0 + 1][:, x0 + 1]
    return (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx
            + g10 * fy * (1 - fx) + g11 * fy * fx)


def value_noise(rng: np.random.Generator, size: int = FALLBACK_SIZE) -> np.ndarray:
    """Multi-octave value noise with a random anisotropy, scaled to [0, 0.6]."""
    out = np.zeros((size, size))
    stretch = rng.uniform(0.25, 1.0)
    horizontal = rng.random() < 0.5
    for octave, cells in enumerate((3, 5, 9, 17, 33)):
        other = max(2, int(round(cells * stretch)))
        shape = (cells, other) if horizontal else (other, cells)
        amp = rng.uniform(0.3, 1.0) / (1.4 ** octave)
        out += amp * _bilinear_grid(rng.random(shape), size)
    return _minmax(out)


class TexturePool:
    """An indexed, immutable set of 64x64 grayscale textures in [0, 0.6]."""

    def __init__(self, textures, digest: str, names=None):
        self.textures = [np.asarray(t, dtype=np.float32) for t in textures]
        self.digest = digest
        self.names = list(names) if names is not None else [f"texture-{i}" for i in range(len(self.textures))]

    def __len__(self):
        return len(self.textures)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.textures[i]

    @classmethod
    def from_directory(cls, directory, size: int = 64) -> "TexturePool":
        root = Path(directory)
        if not root.is_dir():
            raise ConfigurationError(f"texture directory {root} does not exist")
        files = sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise ConfigurationError(f"texture directory {root} contains no images")
        h = hashlib.sha256()
        for p in files:
            rel = p.relative_to(root).as_posix()
            h.update(rel.encode() + b"\0" + p.read_bytes())
        return cls([load_texture(p, size) for p in files], h.hexdigest(), [p.relative_to(root).as_posix() for p in files])

    @classmethod
    def procedural(cls, n: int = 64, seed: int = FALLBACK_SEED, size: int = FALLBACK_SIZE) -> "TexturePool":
        textures = [value_noise(np.random.default_rng([seed, i]), size) for i in range(n)]
        return cls(textures, f"procedural:n={n}:seed={seed}:size={size}")


def resolve_pool(textures=None, fallback: bool = False, size: int = 64) -> TexturePool | None:
    """Texture pool for a texture directory, the procedural fallback, or None."""
    if textures is not None:
        return TexturePool.from_directory(textures, size)
    if fallback:
        return TexturePool.procedural(size=size)
    return None
