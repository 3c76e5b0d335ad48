"""Golden acceptance: engine-vs-reference equivalence and the VFM ablation.

The fixture exports a full ViT-B/16-architecture model (12 layers, 768 dim,
512 projection, 16px patches at 224px input; seeded random weights since
pretrained checkpoints are not available offline) plus three structured
scenes with external features and instance masks.  The engine is exercised
purely through its CLI and the interchange files.
"""

import json
import re
import subprocess
import time

import numpy as np
import pytest

from douc_exporter.export import ExportJob, run_export
from douc_exporter.tensorio import load_tensor

IMAGE_IDS = ("img0", "img1", "img2")


@pytest.fixture(scope="module")
def b16_export(tmp_path_factory):
    out = tmp_path_factory.mktemp("b16-export")
    manifest = run_export(ExportJob(out_dir=out, seed=3))
    return out, json.loads(manifest.read_text())


def run_engine(*argv):
    return subprocess.run(["douc", *map(str, argv)], capture_output=True, text=True)


def pixel_accuracy(pred, gt):
    keep = gt != 255
    return float((pred[keep] == gt[keep]).mean())


def test_g1_golden_equivalence(b16_export):
    out, doc = b16_export
    assert doc["layer_count"] == 12 and doc["embed_dim"] == 768
    assert doc["proj_dim"] == 512 and doc["patch_size"] == 16

    start = time.perf_counter()
    proc = run_engine("verify-golden", "--manifest", out / "manifest.json")
    elapsed = time.perf_counter() - start
    assert proc.returncode == 0, proc.stdout + proc.stderr

    lines = [ln for ln in proc.stdout.splitlines() if re.search(r"max_abs", ln)]
    assert len(lines) == len(IMAGE_IDS) * 8  # 8 staged tensors per image
    assert all(" PASS" in ln for ln in lines)
    worst = max(float(re.search(r"max_abs=([0-9.e+-]+)", ln).group(1)) for ln in lines)
    assert worst <= 1e-3

    # exact label maps rest on a healthy decision margin in the reference;
    # compare against drift at logit scale (tokens live on a ~40x scale)
    logit_drift = max(
        float(re.search(r"max_abs=([0-9.e+-]+)", ln).group(1))
        for ln in lines
        if "logits_" in ln
    )
    margin = doc["export_config"]["notes"]["min_label_margin"]
    assert margin > 3 * logit_drift, (
        f"label margin {margin} too close to logit drift {logit_drift}"
    )
    status = "PASS" if elapsed < 120 else "FAIL"
    print(
        f"G1 golden equivalence: {status} (3 images, worst stage drift "
        f"{worst:.1e} <= 1e-3, labels exact, {elapsed:.1f}s < 120s budget)"
    )
    assert elapsed < 120


def test_g1_shape_audit(b16_export):
    out, doc = b16_export
    v, d, q = 768, 512, len(doc["text"]["query_to_class"])
    grid, feat = 14, 28
    expect = {
        "blocks.0.attn.wq": [v, v],
        "blocks.11.mlp.w1": [v, 4 * v],
        "blocks.11.mlp.w2": [4 * v, v],
        "post_ln.gamma": [v],
        "proj": [v, d],
        "text.embeddings": [q, d],
        "images.img0.tokens": [grid * grid + 1, v],
        "images.img0.features": [feat, feat, 768],
        "images.img0.gt": [112, 112],
    }
    for role, want in expect.items():
        assert doc["entries"][role]["shape"] == want, role
        arr = load_tensor(out / doc["entries"][role]["path"])
        assert list(arr.shape) == want, role


def test_g2_vfm_ablation_strictly_degrades(b16_export, tmp_path):
    out, doc = b16_export
    full_dir = tmp_path / "full"
    novfm_dir = tmp_path / "novfm"
    for directory, flags in ((full_dir, ()), (novfm_dir, ("--vfm", "off"))):
        proc = run_engine(
            "segment", "--manifest", out / "manifest.json",
            "--use-export-config", "--out", directory, "--jobs", "2", *flags,
        )
        assert proc.returncode == 0, proc.stderr

    degradations = []
    for image_id in IMAGE_IDS:
        gt = load_tensor(out / doc["entries"][f"images.{image_id}.gt"]["path"])
        acc_full = pixel_accuracy(load_tensor(full_dir / f"{image_id}_labels.dten"), gt)
        acc_novfm = pixel_accuracy(load_tensor(novfm_dir / f"{image_id}_labels.dten"), gt)
        degradations.append((image_id, acc_full, acc_novfm))
        assert acc_novfm < acc_full, (
            f"{image_id}: no-VFM accuracy {acc_novfm:.4f} did not degrade "
            f"below full-pipeline {acc_full:.4f}"
        )
    summary = ", ".join(f"{i}: {f:.3f}->{n:.3f}" for i, f, n in degradations)
    print(f"G2 VFM ablation: PASS (strict degradation on every image; {summary})")
