"""Scene sampling, rasterization, labels and ground-truth maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..errors import ConfigurationError, DegenerateMapError, LabelError, SaturationError

KINDS = ("circle", "square", "cross")
INTENSITY = {"circle": 0.9, "square": 0.7, "cross": 0.5}
DEFAULT_WEIGHTS = {"circle": 1.0, "square": 2.0, "cross": 3.0}
VARIANTS = ("v1", "v2", "v3")
STRIPE_PERIOD = 4
PLACEMENT_MARGIN = 2
MAX_REJECTIONS = 1000


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    center: tuple  # (row, col)
    size: int  # radius / half-side / arm length, in pixels
    intensity: float
    weight: float = 1.0

    def mask(self, image_size: int = 64) -> np.ndarray:
        return shape_mask(self.kind, self.center, self.size, image_size)


@dataclass(frozen=True)
class SceneSpec:
    shapes: tuple
    background: str
    texture_id: int | None = None
    seed: int = 0
    image_size: int = 64

    def masks(self) -> list[np.ndarray]:
        return [s.mask(self.image_size) for s in self.shapes]


@dataclass
class Sample:
    image: np.ndarray
    label: float | int
    gt_map: np.ndarray
    scene: SceneSpec | None = None
    meta: dict = field(default_factory=dict)


def cross_thickness(size: int) -> int:
    """Half-width of a cross arm."""
    return max(1, size // 4)


def shape_mask(kind: str, center, size: int, image_size: int = 64) -> np.ndarray:
    r, c = center
    yy, xx = np.ogrid[:image_size, :image_size]
    dy, dx = np.abs(yy - r), np.abs(xx - c)
    if kind == "circle":
        m = dy ** 2 + dx ** 2 <= size ** 2
    elif kind == "square":
        m = (dy <= size) & (dx <= size)
    elif kind == "cross":
        t = cross_thickness(size)
        m = ((dy <= size) & (dx <= t)) | ((dx <= size) & (dy <= t))
    else:
        raise ValueError(f"unknown shape kind {kind!r}")
    return np.broadcast_to(m, (image_size, image_size)).copy()


def stripes(image_size: int = 64, period: int = STRIPE_PERIOD) -> np.ndarray:
    rows = (np.arange(image_size) % period) < period // 2
    return np.repeat(rows[:, None], image_size, axis=1).astype(np.float32)


def pick_texture(variant: str, pool, rng: np.random.Generator, fixed_index: int = 0) -> int | None:
    """Texture index used by one sample (None for the stripe background)."""
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}")
    if variant == "v1":
        return None
    if pool is None or len(pool) == 0:
        raise ConfigurationError(f"variant {variant} needs a texture directory or the procedural fallback")
    if variant == "v2":
        if not 0 <= fixed_index < len(pool):
            raise ConfigurationError(f"fixed texture index {fixed_index} outside pool of {len(pool)}")
        return fixed_index
    return int(rng.integers(len(pool)))


def render_background(variant: str, pool, rng: np.random.Generator, fixed_index: int = 0,
                      image_size: int = 64) -> np.ndarray:
    """v1 horizontal binary stripes; v2 one fixed pool texture; v3 a random pool texture."""
    tid = pick_texture(variant, pool, rng, fixed_index)
    if tid is None:
        return stripes(image_size)
    tex = pool[tid]
    if tex.shape != (image_size, image_size):
        raise ConfigurationError(f"texture {tid} has shape {tex.shape}, expected {image_size}x{image_size}")
    return tex.copy()


def place_shapes(rng: np.random.Generator, count_range=(1, 4), size_range=(4, 10), image_size: int = 64,
                 weights=None, kinds=KINDS, margin: int = PLACEMENT_MARGIN,
                 max_rejections: int = MAX_REJECTIONS) -> list[ShapeSpec]:
    """Sample non-overlapping shapes by rejection.

    Kinds, sizes and centers are uniform; the shape count is uniform over
    ``count_range`` (inclusive).  Shapes keep ``margin`` pixels of clearance.
    """
    lo, hi = count_range
    smin, smax = size_range
    if lo < 1 or hi < lo or smin < 1 or smax < smin:
        raise ConfigurationError(f"bad ranges count={count_range} size={size_range}")
    if 2 * smax + 1 > image_size:
        raise ConfigurationError("largest shape does not fit in the image")
    weights = DEFAULT_WEIGHTS if weights is None else weights
    n = int(rng.integers(lo, hi + 1))
    occupied = np.zeros((image_size, image_size), dtype=bool)
    grow = np.ones((2 * margin + 1, 2 * margin + 1), dtype=bool)
    shapes = []
    for _ in range(n):
        for _attempt in range(max_rejections):
            kind = kinds[int(rng.integers(len(kinds)))]
            size = int(rng.integers(smin, smax + 1))
            r = int(rng.integers(size, image_size - size))
            c = int(rng.integers(size, image_size - size))
            m = shape_mask(kind, (r, c), size, image_size)
            if not (m & occupied).any():
                occupied |= ndimage.binary_dilation(m, grow)
                shapes.append(ShapeSpec(kind, (r, c), size, INTENSITY[kind], float(weights[kind])))
                break
        else:
            raise SaturationError(f"could not place shape {len(shapes) + 1} of {n} after {max_rejections} tries")
    return shapes


def rasterize(scene: SceneSpec, background: np.ndarray) -> np.ndarray:
    img = np.array(background, dtype=np.float32, copy=True)
    for s in scene.shapes:
        img[s.mask(scene.image_size)] = s.intensity
    return np.clip(img, 0.0, 1.0)


def max_label_sum(weights, count_max: int) -> float:
    return count_max * max(weights.values())


def compute_label(scene: SceneSpec, mode: str = "count-class", count_range=(1, 4), scale: float | None = None):
    """Class index (shape count minus the smallest count) or summed shape weights.

    In weighted-sum mode the sum is divided by ``scale`` when given (the
    generator passes the maximum attainable sum, mapping labels to [0, 1]).
    """
    n = len(scene.shapes)
    if mode == "count-class":
        lo, hi = count_range
        if not lo <= n <= hi:
            raise LabelError(f"{n} shapes outside the class range {count_range}")
        return n - lo
    if mode == "weighted-sum":
        total = float(sum(s.weight for s in scene.shapes))
        return total / scale if scale else total
    raise ConfigurationError(f"unknown label mode {mode!r}")


def compute_gt(scene: SceneSpec, mode: str = "count-class") -> np.ndarray:
    """Ground-truth explanation as a probability map over shape pixels."""
    if not scene.shapes:
        raise DegenerateMapError("scene has no shapes")
    gt = np.zeros((scene.image_size, scene.image_size), dtype=np.float64)
    for s in scene.shapes:
        m = s.mask(scene.image_size)
        if mode == "count-class":
            gt[m] = 1.0
        elif mode == "weighted-sum":
            gt[m] = s.weight / m.sum()
        else:
            raise ConfigurationError(f"unknown label mode {mode!r}")
    return gt / gt.sum()
