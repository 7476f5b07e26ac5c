"""Dataset generation and on-disk layout.

A dataset directory holds, for every sample ``<id>``, an 8-bit grayscale
``<id>.png`` and a ground-truth ``<id>.smap``, plus ``manifest.csv``
(``file,label,variant,seed,texture_id``) and ``dataset.json`` with the
generation parameters and texture digest.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .. import smap
from ..errors import ConfigurationError
from .scene import (DEFAULT_WEIGHTS, VARIANTS, Sample, SceneSpec, compute_gt, compute_label, max_label_sum,
                    pick_texture, place_shapes, rasterize, stripes)
from .textures import resolve_pool

MANIFEST_HEADER = ["file", "label", "variant", "seed", "texture_id"]
LABEL_MODES = ("count-class", "weighted-sum")


@dataclass
class GenConfig:
    variant: str = "v1"
    count: int = 10
    seed: int = 0
    out_dir: str | None = None
    textures: str | None = None
    fallback: bool = False
    label_mode: str = "count-class"
    count_range: tuple = (1, 4)
    size_range: tuple = (4, 10)
    image_size: int = 64
    fixed_texture: int = 0
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.count < 1:
            raise ConfigurationError("count must be >= 1")
        if self.label_mode not in LABEL_MODES:
            raise ConfigurationError(f"unknown label mode {self.label_mode!r}")
        if self.variant != "v1" and self.textures is None and not self.fallback:
            raise ConfigurationError(
                f"variant {self.variant} needs --textures DIR or the procedural fallback")


@dataclass
class DatasetManifest:
    root: Path
    variant: str
    count: int
    seed: int
    texture_digest: str | None
    files: list
    labels: list
    sample_seeds: list
    texture_ids: list

    @property
    def ids(self) -> list[str]:
        return [Path(f).stem for f in self.files]


def sample_seed(master_seed: int, index: int) -> int:
    """Per-sample seed, a hash of (master seed, index)."""
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1, np.uint64)[0])


def quantize(img: np.ndarray) -> np.ndarray:
    """Round to the 8-bit grid the PNG files store."""
    return (np.round(np.clip(img, 0, 1) * 255) / 255).astype(np.float32)


def generate_sample(cfg: GenConfig, index: int, pool=None) -> Sample:
    seed_i = sample_seed(cfg.seed, index)
    rng = np.random.default_rng(seed_i)
    tid = pick_texture(cfg.variant, pool, rng, cfg.fixed_texture)
    background = stripes(cfg.image_size) if tid is None else pool[tid]
    shapes = place_shapes(rng, cfg.count_range, cfg.size_range, cfg.image_size, cfg.weights)
    scene = SceneSpec(tuple(shapes), cfg.variant, tid, seed_i, cfg.image_size)
    scale = max_label_sum(cfg.weights, cfg.count_range[1]) if cfg.label_mode == "weighted-sum" else None
    label = compute_label(scene, cfg.label_mode, cfg.count_range, scale)
    image = quantize(rasterize(scene, background))
    return Sample(image, label, compute_gt(scene, cfg.label_mode), scene)


def png_bytes(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return (np.asarray(im.convert("L"), dtype=np.float32) / 255.0)


def _label_str(label) -> str:
    return str(label) if isinstance(label, (int, np.integer)) else repr(float(label))


def generate_dataset(cfg: GenConfig, pool=None) -> DatasetManifest:
    """Write ``cfg.count`` samples to ``cfg.out_dir`` and return the manifest.

    Output is a pure function of the config and the texture files.
    """
    cfg.validate()
    if cfg.out_dir is None:
        raise ConfigurationError("out_dir is required")
    if pool is None and cfg.variant != "v1":
        pool = resolve_pool(cfg.textures, cfg.fallback, cfg.image_size)
    root = Path(cfg.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    width = max(6, len(str(cfg.count - 1)))
    rows, files, labels, seeds, tids = [], [], [], [], []
    for i in range(cfg.count):
        s = generate_sample(cfg, i, pool)
        stem = f"{i:0{width}d}"
        (root / f"{stem}.png").write_bytes(png_bytes(s.image))
        smap.write_smap(root / f"{stem}.smap", s.gt_map)
        tid = "" if s.scene.texture_id is None else str(s.scene.texture_id)
        rows.append([f"{stem}.png", _label_str(s.label), cfg.variant, str(s.scene.seed), tid])
        files.append(f"{stem}.png")
        labels.append(s.label)
        seeds.append(s.scene.seed)
        tids.append(s.scene.texture_id)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    writer.writerows(rows)
    (root / "manifest.csv").write_text(buf.getvalue(), encoding="utf-8")
    digest = None if cfg.variant == "v1" else pool.digest
    meta = asdict(cfg)
    meta.pop("out_dir")
    meta["textures"] = None if cfg.textures is None else Path(cfg.textures).name
    meta["texture_digest"] = digest
    (root / "dataset.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return DatasetManifest(root, cfg.variant, cfg.count, cfg.seed, digest, files, labels, seeds, tids)


def read_manifest(root) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.csv"
    if not path.is_file():
        raise FileNotFoundError(f"no manifest.csv in {root}")
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ConfigurationError(f"unexpected manifest header {header}")
        rows = list(reader)
    meta_path = root / "dataset.json"
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.is_file() else {}
    labels = [float(r[1]) if any(ch in r[1] for ch in ".eEn") else int(r[1]) for r in rows]
    return DatasetManifest(
        root, rows[0][2] if rows else meta.get("variant", ""), len(rows), int(meta.get("seed", 0)),
        meta.get("texture_digest"), [r[0] for r in rows], labels, [int(r[3]) for r in rows],
        [int(r[4]) if r[4] else None for r in rows])


def load_dataset(root) -> tuple[DatasetManifest, list[Sample]]:
    """Parse every sample listed in ``root/manifest.csv``."""
    man = read_manifest(root)
    samples = []
    for f, label, seed, tid in zip(man.files, man.labels, man.sample_seeds, man.texture_ids):
        image = read_png(man.root / f)
        gt = smap.read_smap(man.root / (Path(f).stem + ".smap"))
        samples.append(Sample(image, label, gt, None, {"id": Path(f).stem, "seed": seed, "texture_id": tid}))
    return man, samples
