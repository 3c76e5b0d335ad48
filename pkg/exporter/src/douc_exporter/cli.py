"""Command-line entry for running export jobs."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .export import ExportJob, run_export
from .models import ARCHITECTURES


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="douc-export",
        description="Dump a frozen vision model, scene assets and golden bundles.",
    )
    parser.add_argument("--out", required=True, help="export directory")
    parser.add_argument("--arch", default="vit-b16", choices=sorted(ARCHITECTURES))
    parser.add_argument("--checkpoint", help="local pretrained checkpoint directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--images", type=int, default=3)
    parser.add_argument("--classes", type=int, default=4)
    parser.add_argument("--regions", type=int, default=6)
    parser.add_argument("--feat-grid", type=int, default=28, help="external feature grid side")
    parser.add_argument("--feat-channels", type=int, default=768)
    parser.add_argument("--golden-pixel", type=int, default=112, help="golden label-map side")
    parser.add_argument("--tau", type=float, default=8.0)
    parser.add_argument("--lambda-cls", type=float, default=0.1)
    args = parser.parse_args(argv)

    job = ExportJob(
        out_dir=Path(args.out),
        architecture=args.arch,
        checkpoint=args.checkpoint,
        seed=args.seed,
        image_count=args.images,
        num_classes=args.classes,
        regions=args.regions,
        feat_grid=(args.feat_grid, args.feat_grid),
        feat_channels=args.feat_channels,
        golden_pixel=(args.golden_pixel, args.golden_pixel),
        tau=args.tau,
        lambda_cls=args.lambda_cls,
    )
    manifest = run_export(job)
    print(f"manifest -> {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
