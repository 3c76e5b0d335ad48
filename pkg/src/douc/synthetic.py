"""Synthetic export builder: a tiny random model in the interchange format.

Produces a complete export directory (weights, text bank, per-image tokens,
external feature grids, instance masks, ground truth, manifest) without any
pretrained assets.  Used by the test harness and the demo scripts; the same
layout is what a real exporter writes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor_ops import l2_normalize_rows
from .tensorfile import write_tensor

BLOCK_PARAM_SHAPES = (
    ("ln1.gamma", "v"),
    ("ln1.beta", "v"),
    ("attn.wq", "vv"),
    ("attn.bq", "v"),
    ("attn.wk", "vv"),
    ("attn.bk", "v"),
    ("attn.wv", "vv"),
    ("attn.bv", "v"),
    ("attn.wo", "vv"),
    ("attn.bo", "v"),
    ("ln2.gamma", "v"),
    ("ln2.beta", "v"),
    ("mlp.w1", "vf"),
    ("mlp.b1", "f"),
    ("mlp.w2", "fv"),
    ("mlp.b2", "v"),
)


def _random_rect_masks(rng, count, h, w):
    """A few random rectangles; overlaps are fine (resolved at load)."""
    masks = np.zeros((count, h, w), dtype=np.float32)
    for k in range(count):
        y0 = int(rng.integers(0, max(1, h - 1)))
        x0 = int(rng.integers(0, max(1, w - 1)))
        y1 = int(rng.integers(y0 + 1, h + 1))
        x1 = int(rng.integers(x0 + 1, w + 1))
        masks[k, y0:y1, x0:x1] = 1.0
    return masks


def _scale_rect_masks(masks, out_h, out_w):
    """Nearest-neighbor rescale of binary masks (exporter-style rasterization)."""
    k, h, w = masks.shape
    ys = (np.arange(out_h) * h // out_h).clip(0, h - 1)
    xs = (np.arange(out_w) * w // out_w).clip(0, w - 1)
    return masks[:, ys][:, :, xs].astype(np.float32)


def build_synthetic_export(
    out_dir,
    *,
    layer_count: int = 2,
    embed_dim: int = 8,
    proj_dim: int = 4,
    head_count: int = 2,
    grid: tuple[int, int] = (4, 4),
    feat_grid: tuple[int, int] = (5, 5),
    feat_channels: int = 6,
    num_queries: int = 3,
    num_classes: int = 2,
    image_ids=("img0",),
    pixel: tuple[int, int] = (8, 8),
    mask_count: int = 2,
    with_masks: bool = True,
    with_gt: bool = True,
    seed: int = 0,
    export_config: dict | None = None,
    model_id: str = "synthetic-toy",
) -> Path:
    """Write a full synthetic export; returns the manifest path."""
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    tensor_dir = out_dir / "tensors"
    tensor_dir.mkdir(parents=True, exist_ok=True)

    v, f, d = embed_dim, 4 * embed_dim, proj_dim
    gh, gw = grid
    fh, fw = feat_grid
    ph, pw = pixel
    scale = 0.5 / np.sqrt(v)
    entries: dict[str, dict] = {}

    def emit(role: str, values: np.ndarray):
        path = tensor_dir / f"{role}.dten"
        write_tensor(path, values)
        entries[role] = {"path": f"tensors/{role}.dten", "shape": list(values.shape)}

    def rand(shape_code: str) -> np.ndarray:
        dims = {"v": (v,), "f": (f,), "vv": (v, v), "vf": (v, f), "fv": (f, v)}[shape_code]
        if len(dims) == 1:
            return (rng.standard_normal(dims) * 0.02).astype(np.float32)
        return (rng.standard_normal(dims) * scale).astype(np.float32)

    for i in range(layer_count):
        for name, code in BLOCK_PARAM_SHAPES:
            values = rand(code)
            if name.endswith("gamma"):
                values = rng.uniform(0.8, 1.2, v).astype(np.float32)
            emit(f"blocks.{i}.{name}", values)

    emit("post_ln.gamma", rng.uniform(0.8, 1.2, v).astype(np.float32))
    emit("post_ln.beta", (rng.standard_normal(v) * 0.02).astype(np.float32))
    emit("proj", (rng.standard_normal((v, d)) * 0.4).astype(np.float32))
    emit(
        "text.embeddings",
        l2_normalize_rows(rng.standard_normal((num_queries, d)).astype(np.float32)),
    )

    images = []
    for image_id in image_ids:
        emit(
            f"images.{image_id}.tokens",
            rng.standard_normal((gh * gw + 1, v)).astype(np.float32),
        )
        emit(
            f"images.{image_id}.features",
            rng.standard_normal((fh, fw, feat_channels)).astype(np.float32),
        )
        if with_masks and mask_count > 0:
            patch_masks = _random_rect_masks(rng, mask_count, fh, fw)
            emit(f"images.{image_id}.masks_patch", patch_masks)
            emit(
                f"images.{image_id}.masks_pixel", _scale_rect_masks(patch_masks, ph, pw)
            )
        if with_gt:
            gt = rng.integers(0, num_classes, size=(ph, pw)).astype(np.float32)
            emit(f"images.{image_id}.gt", gt)
        images.append({"image_id": image_id, "pixel_h": ph, "pixel_w": pw})

    manifest = {
        "model_id": model_id,
        "layer_count": layer_count,
        "embed_dim": v,
        "proj_dim": d,
        "patch_size": max(1, ph // max(gh, 1)),
        "head_count": head_count,
        "grid_h": gh,
        "grid_w": gw,
        "entries": entries,
        "images": images,
        "text": {
            "class_names": [f"class{i}" for i in range(num_classes)],
            "query_to_class": [i % num_classes for i in range(num_queries)],
        },
        "export_config": export_config or {"ln_eps": 1e-5},
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return manifest_path
