"""Command-line interface: segment, eval, and verify-golden workflows.

Exit codes: 0 success, 1 verification mismatch, 2 configuration error,
3 I/O or manifest error, 4 numeric/shape failure during compute.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from .errors import (
    ConfigError,
    DegenerateInputError,
    DoucError,
    ManifestError,
    NumericError,
    PipelineError,
    ShapeError,
    TensorFileError,
)
from .fusion import FUSION_PRESETS
from .manifest import load_manifest
from .metrics import ConfusionMatrix, compare_report, report_to_json, summarize
from .pipeline import (
    compare_to_golden,
    load_image_inputs,
    load_model_assets,
    run_image,
    write_intermediates,
)
from .tensorfile import read_tensor, write_tensor


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags override its values)")
    p.add_argument("--manifest", help="path to the export manifest.json")
    p.add_argument("--images", nargs="*", help="image ids to process (default: all)")


def _add_branch_flags(p: argparse.ArgumentParser) -> None:
    d = config_mod.DEFAULTS
    p.add_argument("--alpha-og", type=float, help=f"OG fusion weight (default {d['fusion']['alpha_og']})")
    p.add_argument("--alpha-fade", type=float, help=f"proxy-branch fusion weight (default {d['fusion']['alpha_fade']})")
    p.add_argument("--lambda-cls", type=float, help=f"CLS prior weight (default {d['fusion']['lambda_cls']})")
    p.add_argument("--collapse", choices=["max", "mean"], help=f"query->class collapse rule (default {d['fusion']['collapse']})")
    p.add_argument("--post-correct", choices=["on", "off"], help="instance post-correction (default on)")
    p.add_argument("--fusion-preset", choices=sorted(FUSION_PRESETS), help="named (alpha_og, alpha_fade) pair; overridden by explicit --alpha-* flags")
    p.add_argument("--tau", type=float, help=f"proxy affinity temperature (default {d['fade']['tau']})")
    p.add_argument("--mask-mode", choices=["off", "instance"], help=f"affinity masking (default {d['fade']['mask_mode']})")
    p.add_argument("--uncovered-policy", choices=["background-group", "self-only"], help=f"policy for unmasked patches (default {d['fade']['uncovered_policy']})")
    p.add_argument("--vfm", choices=["on", "off"], help="external-feature affinity; off = uniform fallback (default on)")
    p.add_argument("--gate-alpha", type=float, help=f"gate strength (default {d['og']['alpha']})")
    p.add_argument("--gate-temp", type=float, help=f"gate temperature (default {d['og']['temperature']})")
    p.add_argument("--gate-layers", help="comma-separated gated layer indices (default: last quarter)")


def _flag_overrides(args) -> dict:
    """Nested og/fade/fusion overrides from the provided flags."""
    fusion: dict = {}
    if getattr(args, "fusion_preset", None):
        fusion["alpha_og"], fusion["alpha_fade"] = FUSION_PRESETS[args.fusion_preset]
    for flag, key in (
        ("alpha_og", "alpha_og"),
        ("alpha_fade", "alpha_fade"),
        ("lambda_cls", "lambda_cls"),
        ("collapse", "collapse"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            fusion[key] = value
    if getattr(args, "post_correct", None) is not None:
        fusion["post_correct"] = args.post_correct == "on"
    fade: dict = {}
    for flag, key in (
        ("tau", "tau"),
        ("mask_mode", "mask_mode"),
        ("uncovered_policy", "uncovered_policy"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            fade[key] = value
    if getattr(args, "vfm", None) is not None:
        fade["vfm"] = args.vfm == "on"
    og: dict = {}
    if getattr(args, "gate_alpha", None) is not None:
        og["alpha"] = args.gate_alpha
    if getattr(args, "gate_temp", None) is not None:
        og["temperature"] = args.gate_temp
    if getattr(args, "gate_layers", None) is not None:
        try:
            og["layers"] = [int(tok) for tok in str(args.gate_layers).split(",") if tok != ""]
        except ValueError as exc:
            raise ConfigError(f"--gate-layers must be comma-separated integers: {exc}") from exc
    return {"og": og, "fade": fade, "fusion": fusion}


def _resolve(args, use_export_config=False):
    file_cfg = config_mod.load_config_file(args.config) if args.config else {}
    manifest_path = args.manifest or file_cfg.get("manifest")
    if not manifest_path:
        raise ConfigError("no manifest given (use --manifest or the config file)")
    manifest = load_manifest(manifest_path)
    layers = [file_cfg]
    if use_export_config:
        layers.append(manifest.export_config)
    layers.append(_flag_overrides(args))
    merged = config_mod.merge_sections(*layers)
    gate, proxy, fuse = config_mod.build_branch_configs(merged, manifest.layer_count)
    image_ids = args.images if args.images else file_cfg.get("images") or manifest.image_ids()
    if not image_ids:
        raise ConfigError("image list is empty: the manifest declares no images")
    for image_id in image_ids:
        manifest.image(image_id)  # validates the id early
    return manifest, gate, proxy, fuse, image_ids, file_cfg


def cmd_segment(args) -> int:
    manifest, gate, proxy, fuse, image_ids, file_cfg = _resolve(
        args, use_export_config=args.use_export_config
    )
    out_dir = Path(args.out or file_cfg.get("out") or "douc-out")
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = args.jobs or file_cfg.get("jobs") or os.cpu_count() or 1
    assets = load_model_assets(manifest)

    def work(image_id):
        image = load_image_inputs(assets, image_id)
        return run_image(assets, image, gate, proxy, fuse)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, image_ids))
    else:
        results = [work(image_id) for image_id in image_ids]

    # single writer keeps output order deterministic
    for result in results:
        label_path = out_dir / f"{result.image_id}_labels.dten"
        write_tensor(label_path, result.label_map.astype(np.float32))
        if args.dump_intermediates:
            write_intermediates(result, out_dir)
        print(f"{result.image_id}: labels -> {label_path}")
    return 0


def cmd_eval(args) -> int:
    file_cfg = config_mod.load_config_file(args.config) if args.config else {}
    manifest_path = args.manifest or file_cfg.get("manifest")
    if not manifest_path:
        raise ConfigError("no manifest given (use --manifest or the config file)")
    manifest = load_manifest(manifest_path)
    image_ids = args.images if args.images else manifest.image_ids()
    if not image_ids:
        raise ConfigError("image list is empty: nothing to evaluate")
    pred_dir = Path(args.pred)

    missing = []
    for image_id in image_ids:
        if not (pred_dir / f"{image_id}_labels.dten").is_file():
            missing.append(f"prediction for '{image_id}'")
        if not manifest.has(f"images.{image_id}.gt"):
            missing.append(f"ground truth for '{image_id}'")
    if missing:
        for item in missing:
            print(f"missing: {item}", file=sys.stderr)
        raise ManifestError(f"{len(missing)} missing prediction/gt pairs")

    num_classes = len(manifest.text_meta.get("class_names", [])) or int(
        max(manifest.text_meta.get("query_to_class", [0]))
    ) + 1
    cm = ConfusionMatrix(num_classes, ignore_label=args.ignore_label)
    for image_id in image_ids:
        pred = read_tensor(pred_dir / f"{image_id}_labels.dten")
        gt = manifest.load(f"images.{image_id}.gt")
        cm.accumulate(pred, gt)

    metrics = summarize(cm, manifest.text_meta.get("class_names") or None)
    report, text = compare_report([(args.run_name, metrics)])
    print(text)
    if args.out:
        Path(args.out).write_text(report_to_json(report))
        print(f"report -> {args.out}")
    return 0


def cmd_verify_golden(args) -> int:
    manifest, gate, proxy, fuse, image_ids, _ = _resolve(args, use_export_config=True)
    bundle_dir = Path(args.bundle or (Path(manifest.base_dir) / "golden"))
    if not bundle_dir.is_dir():
        raise ManifestError(f"golden bundle directory not found: {bundle_dir}")
    assets = load_model_assets(manifest)

    all_ok = True
    for image_id in image_ids:
        image = load_image_inputs(assets, image_id)
        result = run_image(assets, image, gate, proxy, fuse, include_pre_gate=True)
        for cmp in compare_to_golden(result, bundle_dir):
            status = "PASS" if cmp.passed else "FAIL"
            note = f"  ({cmp.note})" if cmp.note else ""
            print(
                f"{image_id:<12} {cmp.stage:<18} max_abs={cmp.max_abs:.3e} "
                f"tol={cmp.tolerance:.1e} {status}{note}"
            )
            all_ok = all_ok and cmp.passed
    print("golden verification:", "PASS" if all_ok else "FAIL")
    return 0 if all_ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="douc",
        description="Dual-branch training-free dense inference over exported assets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("segment", help="run the pipeline and write label maps")
    _add_common_flags(seg)
    _add_branch_flags(seg)
    seg.add_argument("--out", help="output directory (default douc-out)")
    seg.add_argument("--jobs", type=int, help="worker threads (default: logical cores)")
    seg.add_argument(
        "--dump-intermediates",
        action="store_true",
        help="also write every pipeline intermediate per image",
    )
    seg.add_argument(
        "--use-export-config",
        action="store_true",
        help="seed settings from the manifest's export_config snapshot",
    )
    seg.set_defaults(func=cmd_segment)

    ev = sub.add_parser("eval", help="score predictions against ground truth")
    _add_common_flags(ev)
    ev.add_argument("--pred", required=True, help="directory with <id>_labels.dten files")
    ev.add_argument("--out", help="write the JSON report here")
    ev.add_argument("--ignore-label", type=int, default=255, help="ignored gt value (default 255)")
    ev.add_argument("--run-name", default="run", help="name used in the report")
    ev.set_defaults(func=cmd_eval)

    vg = sub.add_parser(
        "verify-golden",
        help="recompute every staged intermediate and compare to a golden bundle",
    )
    _add_common_flags(vg)
    _add_branch_flags(vg)
    vg.add_argument("--bundle", help="bundle directory (default <manifest dir>/golden)")
    vg.set_defaults(func=cmd_verify_golden)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (TensorFileError, ManifestError, FileNotFoundError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, ShapeError, PipelineError, DegenerateInputError, DoucError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
