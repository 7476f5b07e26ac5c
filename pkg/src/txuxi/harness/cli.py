"""``txuxi`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 quality gate
failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from ..attributions import MethodId
from ..errors import ChecksumError, ConfigurationError, QualityGateError, TxuxiError, WeightFormatError
from ..gen.dataset import GenConfig
from .config import ExperimentConfig, load_config, parse_methods, parse_metrics
from . import pipeline

EXIT_OK, EXIT_USAGE, EXIT_GATE, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, *names: str) -> None:
    p.add_argument("--config", help="experiment config file (key = value with [sections])")
    if "variant" in names:
        p.add_argument("--variant", help="dataset variant: v1, v2 or v3")
    if "count" in names:
        p.add_argument("--count", type=int, help="number of images")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", required=True, help="output directory")
    if "textures" in names:
        p.add_argument("--textures", help="directory of texture images (v2/v3)")
        p.add_argument("--fallback-textures", action="store_true",
                       help="use procedural textures when no texture directory is given")
    if "methods" in names:
        p.add_argument("--methods", help="comma-separated method ids, or 'all'")
    if "metrics" in names:
        p.add_argument("--metrics", help="comma-separated metrics (emd, min)")
    if "force" in names:
        p.add_argument("--force", action="store_true", help="continue past a failed quality gate")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="txuxi", description="Explanation benchmark on synthetic images.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("generate", help="generate a dataset"), "variant", "count", "textures")
    _common(sub.add_parser("train", help="train and score the model of a run directory"), "force")
    _common(sub.add_parser("explain", help="write saliency maps for the test images"), "methods", "force")
    _common(sub.add_parser("evaluate", help="score saliency maps against ground truth"), "methods", "metrics")
    _common(sub.add_parser("report", help="render report.md and quartiles.csv"))
    _common(sub.add_parser("run-all", help="every stage for every variant"),
            "variant", "count", "textures", "methods", "metrics", "force")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "variant", None):
        changes["variants"] = tuple(v.strip() for v in args.variant.split(",") if v.strip())
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "textures", None):
        changes["textures"] = args.textures
    if getattr(args, "fallback_textures", False):
        changes["fallback_textures"] = True
    if getattr(args, "methods", None):
        changes["methods"] = parse_methods(args.methods)
    if getattr(args, "metrics", None):
        changes["metrics"] = parse_metrics(args.metrics)
    if getattr(args, "count", None) is not None and args.command == "run-all":
        changes["data"] = dataclasses.replace(cfg.data, test_count=args.count)
    return dataclasses.replace(cfg, **changes).validate()


def cmd_generate(args) -> int:
    cfg = _config(args)
    d = cfg.data
    variant = args.variant or cfg.variants[0]
    gcfg = GenConfig(variant=variant, count=args.count if args.count is not None else d.test_count,
                     seed=cfg.seed, out_dir=args.out, textures=args.textures if args.textures else cfg.textures,
                     fallback=args.fallback_textures, label_mode=d.label_mode,
                     count_range=(d.count_min, d.count_max), size_range=(d.size_min, d.size_max),
                     image_size=d.image_size)
    man = pipeline.stage_generate(gcfg)
    print(f"wrote {man.count} {variant} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = pipeline.stage_train(args.out, cfg)
    print(f"held-out {out.metric} {out.score:.4f} (threshold {out.threshold}); weights in "
          f"{Path(args.out) / 'model.mnet'}")
    if not out.passed and not args.force:
        print(f"quality gate failed: {out.metric} {out.score:.4f} < {out.threshold}", file=sys.stderr)
        return EXIT_GATE
    return EXIT_OK


def cmd_explain(args) -> int:
    cfg = _config(args)
    mcfg = cfg.method_config if args.seed is None else dataclasses.replace(cfg.method_config, seed=args.seed)
    entries = pipeline.stage_explain(args.out, cfg.methods, mcfg, pipeline.worker_count(), args.force)
    failed = sum(e.failed for e in entries)
    print(f"wrote {len(entries) - failed} saliency maps ({failed} flagged as failed)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    methods = cfg.methods if args.methods else None
    records = pipeline.stage_evaluate(args.out, cfg.metrics, cfg.emd_grid, methods, pipeline.worker_count())
    failed = sum(r.failed for r in records)
    print(f"wrote {len(records)} records ({failed} failed) to {Path(args.out) / 'records.csv'}")
    return EXIT_OK


def cmd_report(args) -> int:
    pipeline.stage_report(args.out)
    print((Path(args.out) / "report.md").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_run_all(args) -> int:
    cfg = _config(args)
    results = pipeline.run_all(cfg, args.out, args.force)
    print((Path(args.out) / "summary.md").read_text(encoding="utf-8"), end="")
    return EXIT_OK if all(r.train.passed for r in results) or args.force else EXIT_GATE


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "explain": cmd_explain, "evaluate": cmd_evaluate,
            "report": cmd_report, "run-all": cmd_run_all}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except QualityGateError as exc:
        print(f"quality gate: {exc}", file=sys.stderr)
        return EXIT_GATE
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ChecksumError, WeightFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TxuxiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
