"""Synthetic shape-over-texture datasets with ground-truth explanation maps."""

from .dataset import DatasetManifest, GenConfig, generate_dataset, generate_sample, load_dataset, read_manifest
from .scene import Sample, SceneSpec, ShapeSpec, compute_gt, compute_label
from .textures import TexturePool, resolve_pool

__all__ = ["DatasetManifest", "GenConfig", "Sample", "SceneSpec", "ShapeSpec", "TexturePool", "compute_gt",
           "compute_label", "generate_dataset", "generate_sample", "load_dataset", "read_manifest",
           "resolve_pool"]
