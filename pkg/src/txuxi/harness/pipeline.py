"""Pipeline stages: generate, train, explain, evaluate, report, and run-all.

A variant's run directory looks like::

    train/  test/          datasets (png + smap + manifest)
    model.mnet             trained weights
    train.json             held-out score and quality-gate outcome
    saliency/<method>/<image>.smap
    saliency/explain_log.csv
    records.csv            one row per (method, image, metric)
    report.md  quartiles.csv
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import smap
from ..attributions import EXPLAINERS, FAMILIES, MethodConfig, MethodId
from ..errors import ConfigurationError, DegenerateMapError, QualityGateError, TxuxiError
from ..gen.dataset import GenConfig, generate_dataset, load_dataset, read_manifest
from ..gen.textures import resolve_pool
from ..metrics import GroundDistance, downsample, emd, min_similarity, normalize
from ..micronet.network import build_network
from ..micronet.training import evaluate as evaluate_model
from ..micronet.training import train as train_model
from ..micronet.weights_io import load_weights, save_weights
from .config import ExperimentConfig
from .report import (EvalRecord, aggregate, family_means, read_records, render_markdown, render_quartiles,
                     write_records)

log = logging.getLogger(__name__)

EXPLAIN_LOG_HEADER = ["method", "image", "target", "failed", "wall_ms"]


def worker_count() -> int:
    """Worker threads: CPU count, capped by ``TXUXI_THREADS`` when set."""
    n = os.cpu_count() or 1
    env = os.environ.get("TXUXI_THREADS")
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigurationError(f"TXUXI_THREADS must be an integer, got {env!r}") from None
        if cap < 1:
            raise ConfigurationError("TXUXI_THREADS must be >= 1")
        n = min(n, cap)
    return n


def _map_ordered(fn, items, workers: int) -> list:
    """Apply ``fn`` to ``items``; results come back in input order whatever the scheduling."""
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


# -- generate ---------------------------------------------------------------

def gen_config(cfg: ExperimentConfig, variant: str, split: str, out_dir, count: int | None = None) -> GenConfig:
    d = cfg.data
    n = count if count is not None else (d.train_count if split == "train" else d.test_count)
    return GenConfig(variant=variant, count=n, seed=cfg.split_seed(variant, split), out_dir=str(out_dir),
                     textures=cfg.textures, fallback=cfg.fallback_textures, label_mode=d.label_mode,
                     count_range=(d.count_min, d.count_max), size_range=(d.size_min, d.size_max),
                     image_size=d.image_size)


def stage_generate(gcfg: GenConfig, pool=None):
    gcfg.validate()
    if pool is None and gcfg.variant != "v1":
        pool = resolve_pool(gcfg.textures, gcfg.fallback, gcfg.image_size)
    return generate_dataset(gcfg, pool)


# -- train ------------------------------------------------------------------

@dataclass(frozen=True)
class TrainOutcome:
    metric: str
    score: float
    passed: bool
    threshold: float
    epochs: int
    final_loss: float | None


def stage_train(run_dir, cfg: ExperimentConfig, variant: str = "") -> TrainOutcome:
    """Train on ``train/``, score on ``test/``, write ``model.mnet`` and ``train.json``."""
    run_dir = Path(run_dir)
    _, train_set = load_dataset(run_dir / "train")
    _, test_set = load_dataset(run_dir / "test")
    d = cfg.data
    head = "classification" if d.label_mode == "count-class" else "regression"
    key = variant or read_manifest(run_dir / "train").variant
    net = build_network(d.count_max - d.count_min + 1, head, seed=cfg.split_seed(key, "init"),
                        input_size=d.image_size)
    tcfg = cfg.train.train_config(cfg.split_seed(key, "shuffle"), cfg.loss)
    net, history = train_model(net, [(s.image, s.label, s.gt_map) for s in train_set], tcfg)
    result = evaluate_model(net, [(s.image, s.label) for s in test_set])
    metric = "accuracy" if head == "classification" else "r2"
    score = result[metric]
    passed = bool(score >= cfg.train.min_score)
    save_weights(net, run_dir / "model.mnet")
    outcome = TrainOutcome(metric, float(score), passed, cfg.train.min_score, tcfg.epochs,
                           history[-1] if history else None)
    (run_dir / "train.json").write_text(json.dumps(outcome.__dict__, sort_keys=True, indent=2) + "\n",
                                        encoding="utf-8")
    return outcome


def check_gate(run_dir, force: bool = False) -> None:
    path = Path(run_dir) / "train.json"
    if not path.is_file():
        raise FileNotFoundError(f"{path} not found; run the train stage first")
    info = json.loads(path.read_text(encoding="utf-8"))
    if not info["passed"] and not force:
        raise QualityGateError(
            f"held-out {info['metric']} {info['score']:.3f} is below {info['threshold']}; use --force to continue")


# -- explain ----------------------------------------------------------------

@dataclass(frozen=True)
class ExplainEntry:
    method: str
    image: str
    target: int
    failed: bool
    wall_ms: float


def stage_explain(run_dir, methods, mcfg: MethodConfig, workers: int = 1, force: bool = False) -> list:
    """Write one SMAP per (method, test image); all-zero or failed maps are flagged."""
    run_dir = Path(run_dir)
    check_gate(run_dir, force)
    net = load_weights(run_dir / "model.mnet")
    _, samples = load_dataset(run_dir / "test")
    out = run_dir / "saliency"
    for m in methods:
        (out / m.value).mkdir(parents=True, exist_ok=True)

    def job(item):
        method, sample = item
        image_id = sample.meta["id"]
        t0 = time.perf_counter()
        try:
            raw = EXPLAINERS[method](net, sample.image, None, mcfg)
        except (TxuxiError, ValueError, FloatingPointError) as exc:
            log.warning("%s failed on %s: %s", method.value, image_id, exc)
            return ExplainEntry(method.value, image_id, -1, True, (time.perf_counter() - t0) * 1e3)
        wall = (time.perf_counter() - t0) * 1e3
        smap.write_smap(out / method.value / f"{image_id}.smap", raw.map)
        degenerate = not np.any(raw.map)
        return ExplainEntry(method.value, image_id, raw.target, degenerate, wall)

    items = [(m, s) for m in methods for s in samples]
    entries = _map_ordered(job, items, workers)
    _write_csv(out / "explain_log.csv", EXPLAIN_LOG_HEADER,
               [[e.method, e.image, e.target, int(e.failed), f"{e.wall_ms:.3f}"] for e in entries])
    return entries


# -- evaluate ---------------------------------------------------------------

def score_maps(pred, gt, metrics, grid: int = 16, gd: GroundDistance | None = None) -> dict:
    """Metric values for one predicted map against its ground truth.

    The prediction's absolute value is used; both maps are scaled to unit
    mass.  EMD runs on ``grid x grid`` sum-pooled maps, MIN at full size.
    Raises :class:`DegenerateMapError` when either map has no mass.
    """
    p = normalize(np.abs(np.asarray(pred, dtype=np.float64)))
    q = normalize(gt)
    out = {}
    for metric in metrics:
        if metric == "emd":
            gd = gd or GroundDistance((grid, grid))
            out[metric] = emd(downsample(p, (grid, grid)), downsample(q, (grid, grid)), gd)
        elif metric == "min":
            out[metric] = min_similarity(p, q)
        else:
            raise ConfigurationError(f"unknown metric {metric!r}")
    return out


def _explain_walls(run_dir: Path) -> dict:
    path = run_dir / "saliency" / "explain_log.csv"
    if not path.is_file():
        return {}
    with path.open(encoding="utf-8", newline="") as fh:
        return {(r["method"], r["image"]): float(r["wall_ms"]) for r in csv.DictReader(fh)}


def available_methods(run_dir) -> list:
    root = Path(run_dir) / "saliency"
    present = {p.name for p in root.iterdir() if p.is_dir()} if root.is_dir() else set()
    return [m for m in MethodId if m.value in present]


def stage_evaluate(run_dir, metrics, grid: int = 16, methods=None, workers: int = 1) -> list:
    """Score every saliency map against the test ground truth and write ``records.csv``.

    Unreadable or degenerate maps produce NaN records flagged as failed.
    """
    run_dir = Path(run_dir)
    man = read_manifest(run_dir / "test")
    methods = available_methods(run_dir) if methods is None else list(methods)
    walls = _explain_walls(run_dir)
    gd = GroundDistance((grid, grid))
    gts = {}
    for image_id in man.ids:
        try:
            gts[image_id] = smap.read_smap(run_dir / "test" / f"{image_id}.smap")
        except (OSError, TxuxiError) as exc:
            log.warning("ground truth %s unreadable: %s", image_id, exc)
            gts[image_id] = None

    def job(item):
        method, image_id = item
        wall = walls.get((method.value, image_id))
        try:
            gt = gts[image_id]
            if gt is None:
                raise DegenerateMapError("ground truth unreadable")
            pred = smap.read_smap(run_dir / "saliency" / method.value / f"{image_id}.smap")
            if pred.shape != gt.shape:
                raise DegenerateMapError(f"shape {pred.shape} differs from ground truth {gt.shape}")
            values = score_maps(pred, gt, metrics, grid, gd)
            return [EvalRecord(method.value, image_id, m, values[m], False, wall) for m in metrics]
        except (OSError, TxuxiError) as exc:
            log.warning("%s/%s: %s", method.value, image_id, exc)
            return [EvalRecord(method.value, image_id, m, math.nan, True, wall) for m in metrics]

    items = [(m, i) for m in methods for i in man.ids]
    records = [r for rs in _map_ordered(job, items, workers) for r in rs]
    write_records(run_dir / "records.csv", records)
    return records


# -- report -----------------------------------------------------------------

def stage_report(run_dir, title: str | None = None) -> dict:
    run_dir = Path(run_dir)
    records = read_records(run_dir / "records.csv")
    table = aggregate(records)
    if title is None:
        try:
            title = f"Results: {read_manifest(run_dir / 'test').variant}"
        except (OSError, TxuxiError):
            title = "Results"
    (run_dir / "report.md").write_text(render_markdown(table, title), encoding="utf-8")
    (run_dir / "quartiles.csv").write_text(render_quartiles(table), encoding="utf-8")
    return table


# -- run-all ----------------------------------------------------------------

@dataclass(frozen=True)
class VariantResult:
    variant: str
    train: TrainOutcome
    families: dict
    emd_range_ok: bool
    seconds: dict = field(default_factory=dict, compare=False)  # wall time per stage, never written to reports

    @property
    def ordering_ok(self) -> bool:
        f = self.families.get("emd", {})
        b, c, s = f.get("backprop", math.nan), f.get("cam", math.nan), f.get("sensitivity", math.nan)
        return bool(b < c < s)


def family_table(table) -> dict:
    fams = {k: tuple(m.value for m in v) for k, v in FAMILIES.items()}
    return family_means(table, fams)


def render_summary(results: list[VariantResult]) -> str:
    fams = list(FAMILIES)
    lines = ["# Family summary", "",
             "Family means of per-method means (EMD: lower is better; MIN: higher is better).", ""]
    for metric in ("emd", "min"):
        if not any(metric in r.families for r in results):
            continue
        head = ["Variant"] + [f"{f} {metric.upper()}" for f in fams]
        lines += ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for r in results:
            vals = r.families.get(metric, {})
            cells = [r.variant] + [("nan" if math.isnan(vals.get(f, math.nan)) else f"{vals[f]:.4f}") for f in fams]
            lines.append("| " + " | ".join(cells) + " |")
        lines.append("")
    lines += ["| Variant | Held-out score | backprop < cam < sensitivity (EMD) | all EMD in [0, 1] |",
              "|---|---|---|---|"]
    for r in results:
        lines.append(f"| {r.variant} | {r.train.metric} {r.train.score:.3f} | "
                     f"{'pass' if r.ordering_ok else 'FAIL'} | {'pass' if r.emd_range_ok else 'FAIL'} |")
    return "\n".join(lines) + "\n"


def run_variant(cfg: ExperimentConfig, variant: str, run_dir, force: bool = False, workers: int = 1,
                echo=print) -> VariantResult:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    pool = None if variant == "v1" else resolve_pool(cfg.textures, cfg.fallback_textures, cfg.data.image_size)
    for split in ("train", "test"):
        stage_generate(gen_config(cfg, variant, split, run_dir / split), pool)
    echo(f"[{variant}] datasets written")
    seconds = {}
    t0 = time.perf_counter()
    outcome = stage_train(run_dir, cfg, variant)
    seconds["train"] = time.perf_counter() - t0
    echo(f"[{variant}] trained in {seconds['train']:.0f}s: held-out {outcome.metric} "
         f"{outcome.score:.3f} ({'pass' if outcome.passed else 'below'} {outcome.threshold})")
    check_gate(run_dir, force)
    t0 = time.perf_counter()
    stage_explain(run_dir, cfg.methods, cfg.method_config, workers, force)
    seconds["explain"] = time.perf_counter() - t0
    echo(f"[{variant}] explained in {seconds['explain']:.0f}s")
    t0 = time.perf_counter()
    records = stage_evaluate(run_dir, cfg.metrics, cfg.emd_grid, cfg.methods, workers)
    seconds["evaluate"] = time.perf_counter() - t0
    echo(f"[{variant}] evaluated in {seconds['evaluate']:.0f}s")
    table = stage_report(run_dir, f"Results: {variant}")
    emd_vals = [r.value for r in records if r.metric == "emd" and not r.failed]
    in_range = all(0.0 <= v <= 1.0 for v in emd_vals)
    return VariantResult(variant, outcome, family_table(table), in_range, seconds)


def run_all(cfg: ExperimentConfig, out_root, force: bool = False, workers: int | None = None,
            echo=print) -> list[VariantResult]:
    """Every stage for every configured variant, then ``summary.md`` at the root."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    workers = worker_count() if workers is None else workers
    results = []
    for variant in cfg.variants:
        results.append(run_variant(cfg, variant, out_root / variant, force, workers, echo))
    text = render_summary(results)
    (out_root / "summary.md").write_text(text, encoding="utf-8")
    for r in results:
        echo(f"{r.variant}: family EMD ordering {'PASS' if r.ordering_ok else 'FAIL'}, "
             f"EMD range {'PASS' if r.emd_range_ok else 'FAIL'}")
    return results
