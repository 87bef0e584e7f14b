"""Command-line entry point.

Subcommands: gen-data, train, try-on, edit, outfit, eval. Every command
takes ``--config`` and prints a machine-readable JSON summary on success.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from tryondiff import metrics, pipeline, synth
from tryondiff.config import ConfigError, load_config
from tryondiff.shape_control import GarmentCondition


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="tryondiff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="INI pipeline configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")

    common(sub.add_parser("gen-data", help="generate the synthetic dataset trees"))

    p = sub.add_parser("train", help="train a pipeline stage")
    common(p)
    p.add_argument("--stage", choices=("scm", "codec", "tgm", "all"), default="all")

    p = sub.add_parser("try-on", help="wear a garment (shape and texture together)")
    common(p)
    p.add_argument("--person", required=True, help="test-split sample id")
    p.add_argument("--garment", required=True, help="sample id providing the garment")
    p.add_argument("--role", choices=("upper", "lower"), default="upper")

    p = sub.add_parser("edit", help="decoupled shape/texture edit")
    common(p)
    p.add_argument("--person", required=True)
    p.add_argument("--shape-garment", required=True)
    p.add_argument("--texture-garment", required=True)
    p.add_argument("--role", choices=("upper", "lower"), default="upper")

    p = sub.add_parser("outfit", help="full-body outfit via two passes")
    common(p)
    p.add_argument("--person", required=True)
    p.add_argument("--top", required=True)
    p.add_argument("--bottom", required=True)
    p.add_argument("--order", choices=("top_first", "bottom_first"), default="top_first")

    p = sub.add_parser("eval", help="compute metrics over an image directory pair")
    common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--scales", type=int, default=3, help="SSIM pyramid levels")
    return parser


def _load_cfg(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def _find_sample(cfg, sample_id: str):
    root = cfg.dataset_dir(cfg.resolutions[-1])
    for split in ("test", "train"):
        pairs = root / f"{split}_pairs.txt"
        if pairs.exists() and f"{sample_id}.png" in pairs.read_text():
            for person, up, low in pipeline.load_synth_samples(root, split):
                if person.id == sample_id:
                    return person, up, low
    raise ConfigError(f"sample id {sample_id!r} not found under {root}")


def _garment(cfg, sample_id: str, role: str) -> GarmentCondition:
    _, up, low = _find_sample(cfg, sample_id)
    return GarmentCondition(up if role == "upper" else low, role)


def _own_other(cfg, person_id: str, edited_role: str) -> GarmentCondition:
    other_role = "lower" if edited_role == "upper" else "upper"
    return _garment(cfg, person_id, other_role)


def _save_result(cfg, name: str, image: np.ndarray, seg: np.ndarray) -> dict:
    out = Path(cfg.out_dir) / "results"
    out.mkdir(parents=True, exist_ok=True)
    img_path = out / f"{name}.png"
    seg_path = out / f"{name}_seg.png"
    synth._save_rgb(img_path, image)
    from tryondiff import labels as L

    L.save_palette_png(seg, seg_path)
    return {"image": str(img_path), "segmentation": str(seg_path)}


def _run(args) -> dict:
    cfg = _load_cfg(args)
    if args.command == "gen-data":
        dirs = pipeline.generate_datasets(cfg)
        return {"command": "gen-data", "seed": cfg.seed, "datasets": dirs}

    if args.command == "train":
        stages = pipeline.STAGES if args.stage == "all" else (args.stage,)
        out = {}
        for stage in stages:
            path = pipeline.train(cfg, stage)
            out[stage] = str(path)
        return {"command": "train", "seed": cfg.seed, "checkpoints": out}

    if args.command == "eval":
        report = metrics.evaluate(
            args.pred,
            args.ref,
            {"seed": cfg.seed, "out": str(Path(cfg.out_dir) / "eval"), "scales": args.scales},
        )
        return {"command": "eval", "report": report}

    models = pipeline.load_models(cfg)
    person, _, _ = _find_sample(cfg, args.person)

    if args.command == "try-on":
        garment = _garment(cfg, args.garment, args.role)
        image, seg = pipeline.try_on(
            models, person, garment, cfg.seed, other=_own_other(cfg, args.person, args.role)
        )
        name = f"tryon_{args.person}_{args.garment}_{args.role}_s{cfg.seed}"
    elif args.command == "edit":
        shape = _garment(cfg, args.shape_garment, args.role)
        tex = _garment(cfg, args.texture_garment, args.role)
        image, seg = pipeline.edit(
            models, person, shape, tex, cfg.seed,
            other=_own_other(cfg, args.person, args.role),
        )
        name = f"edit_{args.person}_{args.shape_garment}_{args.texture_garment}_s{cfg.seed}"
    else:  # outfit
        top = _garment(cfg, args.top, "upper")
        bottom = _garment(cfg, args.bottom, "lower")
        image, seg = pipeline.full_outfit(
            models, person, top, bottom, cfg.seed, order=args.order
        )
        name = f"outfit_{args.person}_{args.top}_{args.bottom}_{args.order}_s{cfg.seed}"

    paths = _save_result(cfg, name, image, seg)
    return {"command": args.command, "seed": cfg.seed, **paths}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as e:  # --help and friends
        return 0 if e.code in (0, None) else 1
    try:
        summary = _run(args)
    except ConfigError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
