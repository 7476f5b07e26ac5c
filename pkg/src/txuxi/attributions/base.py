"""Shared types for attribution methods: ids, configuration, maps, helpers."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, InputShapeError
from ..micronet.layers import Conv2D
from ..micronet.network import Network, apply_head, predict_logits


class MethodId(str, enum.Enum):
    GRADIENT = "gradient"
    GBP = "gbp"
    SMOOTHGRAD = "smoothgrad"
    INTEGRATED_GRADIENTS = "integratedgradients"
    DEEPLIFT = "deeplift"
    LRP = "lrp"
    LIME = "lime"
    KERNEL_SHAP = "kernelshap"
    RISE = "rise"
    GRADCAM = "gradcam"
    GRADCAMPP = "gradcampp"
    SCORECAM = "scorecam"
    SIDU = "sidu"

    @classmethod
    def parse(cls, name: str) -> "MethodId":
        key = name.strip().lower().replace("_", "").replace("-", "").replace("+", "p")
        for m in cls:
            if m.value == key:
                return m
        valid = ", ".join(m.value for m in cls)
        raise ConfigurationError(f"unknown method {name!r}; valid ids: {valid}")


# methods whose raw output can be negative
SIGNED = frozenset({MethodId.INTEGRATED_GRADIENTS, MethodId.DEEPLIFT, MethodId.LRP, MethodId.LIME,
                    MethodId.KERNEL_SHAP})


@dataclass(frozen=True)
class MethodConfig:
    """Hyperparameters for every method; each method reads only its own fields."""

    seed: int = 0
    smoothgrad_samples: int = 50
    noise_fraction: float = 0.15
    ig_steps: int = 50
    baseline: np.ndarray | None = field(default=None, compare=False)
    grid: tuple = (8, 8)
    lime_samples: int = 1000
    shap_samples: int = 1000
    ridge_lambda: float = 1e-3
    kernel_width: float | None = None
    occlusion_value: float = 0.0
    rise_masks: int = 4000
    rise_grid: tuple = (8, 8)
    keep_prob: float = 0.5
    cam_layer: int | None = None
    sidu_threshold: float = 0.5
    sidu_sigma: float = 0.25
    batch_size: int = 8

    def __post_init__(self):
        counts = dict(smoothgrad_samples=self.smoothgrad_samples, ig_steps=self.ig_steps,
                      lime_samples=self.lime_samples, shap_samples=self.shap_samples,
                      rise_masks=self.rise_masks, batch_size=self.batch_size)
        for name, v in counts.items():
            if int(v) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if min(self.grid) < 1 or min(self.rise_grid) < 1:
            raise ConfigurationError("grid dimensions must be >= 1")
        if not 0 < self.keep_prob <= 1:
            raise ConfigurationError("keep_prob must lie in (0, 1]")
        if not 0 <= self.sidu_threshold < 1:
            raise ConfigurationError("sidu_threshold must lie in [0, 1)")
        if self.noise_fraction < 0 or self.sidu_sigma <= 0 or self.ridge_lambda < 0:
            raise ConfigurationError("noise_fraction, ridge_lambda must be >= 0 and sidu_sigma > 0")
        if self.kernel_width is not None and self.kernel_width <= 0:
            raise ConfigurationError("kernel_width must be > 0")


@dataclass(frozen=True)
class RawSaliency:
    map: np.ndarray
    method: MethodId
    target: int

    def __post_init__(self):
        if self.map.ndim != 2:
            raise ValueError(f"saliency maps are 2-D, got {self.map.shape}")
        if not np.isfinite(self.map).all():
            raise ValueError(f"{self.method.value} produced non-finite values")


def normalize_attribution(raw: RawSaliency) -> RawSaliency:
    """Absolute value of the map; nonnegative maps are returned unchanged."""
    if (raw.map >= 0).all():
        return raw
    return RawSaliency(np.abs(raw.map), raw.method, raw.target)


@dataclass(frozen=True)
class SegmentGrid:
    """Partition of an ``h x w`` image into ``gh x gw`` equal rectangles."""

    image_size: tuple
    gh: int
    gw: int

    @property
    def n_segments(self) -> int:
        return self.gh * self.gw

    @property
    def cell(self) -> tuple:
        return self.image_size[0] // self.gh, self.image_size[1] // self.gw

    def labels(self) -> np.ndarray:
        """Segment index of every pixel."""
        ch, cw = self.cell
        r = np.arange(self.image_size[0]) // ch
        c = np.arange(self.image_size[1]) // cw
        return r[:, None] * self.gw + c[None, :]

    def expand(self, values) -> np.ndarray:
        """Broadcast per-segment values (``(..., M)``) to pixels (``(..., h, w)``)."""
        v = np.asarray(values)
        ch, cw = self.cell
        v = v.reshape(v.shape[:-1] + (self.gh, 1, self.gw, 1))
        v = np.broadcast_to(v, v.shape[:-4] + (self.gh, ch, self.gw, cw))
        return v.reshape(v.shape[:-4] + self.image_size)


def segment_grid(image_size, gh: int = 8, gw: int = 8) -> SegmentGrid:
    h, w = (image_size, image_size) if np.isscalar(image_size) else tuple(image_size)
    if gh < 1 or gw < 1 or h % gh or w % gw:
        raise ConfigurationError(f"a {gh}x{gw} grid does not evenly divide a {h}x{w} image")
    return SegmentGrid((int(h), int(w)), int(gh), int(gw))


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation from ``n_in`` to ``n_out`` samples (pixel centers aligned)."""
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), lo), 1 - frac)
    np.add.at(m, (np.arange(n_out), hi), frac)
    return m


def upsample(a, size) -> np.ndarray:
    """Bilinear resize of the last two axes of ``a`` to ``size``."""
    a = np.asarray(a, dtype=np.float64)
    h, w = a.shape[-2:]
    rows = interp_matrix(h, size[0])
    cols = interp_matrix(w, size[1])
    return rows @ a @ cols.T


def as_input(net: Network, x) -> np.ndarray:
    """A single input shaped like the network expects (channel axis added if missing)."""
    x = np.asarray(x, dtype=net.dtype)
    if x.shape == net.input_shape[1:] and net.input_shape[0] == 1:
        x = x[None]
    if x.shape != net.input_shape:
        raise InputShapeError(f"expected an image of shape {net.input_shape}, got {x.shape}")
    return x


def to_map(a: np.ndarray) -> np.ndarray:
    """Collapse the channel axis of a ``(C, H, W)`` attribution."""
    return np.asarray(a, dtype=np.float64).sum(axis=0)


def resolve_target(net: Network, x: np.ndarray, target) -> int:
    """Explicit target, or the predicted class (index 0 for regression)."""
    if target is not None:
        return int(target)
    if net.head != "classification":
        return 0
    return int(np.argmax(predict_logits(net, x)))


def score_fn(model, target: int, batch_size: int = 8):
    """Batch scorer ``images -> selected pre-head score``.

    ``model`` is a :class:`Network` or any callable mapping an image batch to
    scores (1-D) or outputs (2-D, column ``target`` is taken).
    """
    if isinstance(model, Network):
        return lambda xs: predict_logits(model, xs, batch_size)[:, target].astype(np.float64)

    def call(xs):
        out = np.asarray(model(xs), dtype=np.float64)
        return out if out.ndim == 1 else out[:, target]
    return call


def output_fn(model, batch_size: int = 8):
    """Batch scorer returning the full post-head output vector per image."""
    if isinstance(model, Network):
        return lambda xs: apply_head(model, predict_logits(model, xs, batch_size)).astype(np.float64)
    return lambda xs: np.atleast_2d(np.asarray(model(xs), dtype=np.float64).T).T


def default_cam_layer(net: Network) -> int:
    """Index of the last convolution layer."""
    for i in range(len(net.layers) - 1, -1, -1):
        if isinstance(net.layers[i], Conv2D):
            return i
    raise ConfigurationError("network has no convolution layer")
