"""Export jobs: dump model weights, per-image assets, text banks and goldens.

One job produces a self-contained directory the engine can consume:

    out_dir/
      manifest.json
      tensors/<role>.dten        weights, text bank, per-image inputs
      golden/<image_id>/<stage>.dten   reference intermediates

Every hyperparameter the reference pipeline used is recorded in the
manifest's export_config so the engine's golden verification runs with
exactly the same settings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .models import block_role_tensors, build_vision_model, embed_image, head_role_tensors
from .reference import (
    fade_dense_embeddings,
    forward_tokens,
    project_dense,
    run_reference,
    _unit_rows,
)
from .scenes import Scene, build_scene
from .tensorio import save_tensor

BLOCK_SUFFIXES = (
    "ln1.gamma", "ln1.beta",
    "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
    "attn.wo", "attn.bo",
    "ln2.gamma", "ln2.beta",
    "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
)


@dataclass
class ExportJob:
    out_dir: Path
    architecture: str = "vit-b16"
    checkpoint: str | None = None
    seed: int = 0
    image_count: int = 3
    num_classes: int = 4
    regions: int = 6
    feat_grid: tuple[int, int] = (28, 28)
    feat_channels: int = 768
    golden_pixel: tuple[int, int] = (112, 112)
    queries_per_class: int = 2
    gate_layers: tuple[int, ...] | None = None
    gate_alpha: float = 0.5
    gate_temperature: float = 0.25
    tau: float = 8.0
    mask_mode: str = "instance"
    uncovered_policy: str = "background-group"
    alpha_og: float = 0.5
    alpha_fade: float = 0.5
    lambda_cls: float = 0.1
    collapse: str = "max"
    post_correct: bool = True
    color_noise: float = 0.1
    feature_noise: float = 0.15
    corrupt_fraction: float = 0.25
    mask_keep: str = "alternate"
    model_id: str = ""
    extra_notes: dict = field(default_factory=dict)

    def resolved_gate_layers(self, layer_count: int) -> tuple[int, ...]:
        if self.gate_layers is not None:
            return tuple(self.gate_layers)
        n = max(1, layer_count // 4)
        return tuple(range(layer_count - n, layer_count))

    def engine_config(self, layer_count: int) -> dict:
        return {
            "ln_eps": 1e-5,
            "og": {
                "layers": list(self.resolved_gate_layers(layer_count)),
                "alpha": self.gate_alpha,
                "temperature": self.gate_temperature,
            },
            "fade": {
                "tau": self.tau,
                "mask_mode": self.mask_mode,
                "uncovered_policy": self.uncovered_policy,
                "vfm": True,
            },
            "fusion": {
                "alpha_og": self.alpha_og,
                "alpha_fade": self.alpha_fade,
                "lambda_cls": self.lambda_cls,
                "collapse": self.collapse,
                "post_correct": self.post_correct,
            },
        }


class ExportWriter:
    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.entries: dict[str, dict] = {}

    def emit(self, role: str, values) -> None:
        if torch.is_tensor(values):
            values = values.detach().cpu().numpy()
        values = np.asarray(values, dtype=np.float32)
        rel = f"tensors/{role}.dten"
        save_tensor(self.out_dir / rel, values)
        self.entries[role] = {"path": rel, "shape": list(values.shape)}


def export_model(job: ExportJob, model, writer: ExportWriter) -> None:
    """All ViT block tensors, post-norm, projection into interchange roles."""
    for i in range(model.config.num_hidden_layers):
        for suffix, tensor in block_role_tensors(model, i).items():
            writer.emit(f"blocks.{i}.{suffix}", tensor)
    for role, tensor in head_role_tensors(model).items():
        writer.emit(role, tensor)


def build_scenes(job: ExportJob, model) -> list[Scene]:
    rng = np.random.default_rng(job.seed)
    return [
        build_scene(
            f"img{i}",
            rng,
            image_size=model.config.image_size,
            patch_size=model.config.patch_size,
            feat_grid=job.feat_grid,
            feat_channels=job.feat_channels,
            golden_pixel=job.golden_pixel,
            num_classes=job.num_classes,
            regions=job.regions,
            color_noise=job.color_noise,
            feature_noise=job.feature_noise,
            corrupt_fraction=job.corrupt_fraction,
            mask_keep=job.mask_keep,
        )
        for i in range(job.image_count)
    ]


@torch.no_grad()
def build_text_bank(job: ExportJob, model, scenes, tokens_per_scene, cfg) -> tuple[np.ndarray, list[int]]:
    """Prompt-ensemble stand-in: per-class prototypes from dense embeddings.

    Pools the patch embeddings of both inference branches (gated standard
    forward and proxy-aggregated forward), mirroring how real text
    embeddings are aligned with the vision space the predictions live in.
    Two queries per class, pooled over disjoint image splits, so the
    engine's query->class collapse is exercised.  Rows are unit-normalized.
    """
    grid = model.config.image_size // model.config.patch_size
    per_class_split: dict[tuple[int, int], list[torch.Tensor]] = {}
    for idx, (scene, tokens) in enumerate(zip(scenes, tokens_per_scene)):
        gated = forward_tokens(model, tokens, cfg, gated=True)
        z_og = _unit_rows(project_dense(model, gated)[1:])
        classes_og = scene.class_grid(grid, grid).reshape(-1)
        z_fade = fade_dense_embeddings(
            model, tokens, scene.features,
            scene.patch_masks if len(scene.patch_masks) else None, cfg,
        )
        fh, fw = scene.features.shape[:2]
        classes_fade = scene.class_grid(fh, fw).reshape(-1)
        split = idx % min(2, job.queries_per_class)
        for c in range(job.num_classes):
            for z, classes in ((z_og, classes_og), (z_fade, classes_fade)):
                rows = z[torch.from_numpy(classes == c)]
                if len(rows):
                    per_class_split.setdefault((c, split), []).append(rows)

    queries, mapping = [], []
    for c in range(job.num_classes):
        for split in range(job.queries_per_class):
            rows = per_class_split.get((c, split % 2), [])
            if not rows:  # class absent from this split: pool over all splits
                rows = [
                    r
                    for (cc, _), chunks in per_class_split.items()
                    if cc == c
                    for r in chunks
                ]
            if not rows:
                raise ValueError(f"class {c} never appears in any scene")
            proto = torch.cat(rows).mean(dim=0)
            queries.append(proto / torch.clamp(torch.linalg.norm(proto), min=1e-12))
            mapping.append(c)
    bank = torch.stack(queries).numpy().astype(np.float32)
    return bank, mapping


@torch.no_grad()
def run_export(job: ExportJob) -> Path:
    """Full export: model, scenes, text bank, golden bundles, manifest."""
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = build_vision_model(job.architecture, seed=job.seed, checkpoint=job.checkpoint)
    layer_count = model.config.num_hidden_layers
    cfg = job.engine_config(layer_count)
    writer = ExportWriter(out_dir)

    export_model(job, model, writer)

    scenes = build_scenes(job, model)
    tokens_per_scene = [embed_image(model, s.pixel_values) for s in scenes]

    bank, mapping = build_text_bank(job, model, scenes, tokens_per_scene, cfg)
    writer.emit("text.embeddings", bank)

    images = []
    for scene, tokens in zip(scenes, tokens_per_scene):
        writer.emit(f"images.{scene.image_id}.tokens", tokens)
        writer.emit(f"images.{scene.image_id}.features", scene.features)
        if len(scene.patch_masks):
            writer.emit(f"images.{scene.image_id}.masks_patch", scene.patch_masks)
            writer.emit(f"images.{scene.image_id}.masks_pixel", scene.pixel_masks)
        writer.emit(f"images.{scene.image_id}.gt", scene.gt)
        images.append(
            {
                "image_id": scene.image_id,
                "pixel_h": job.golden_pixel[0],
                "pixel_w": job.golden_pixel[1],
            }
        )

    min_margin = export_golden(job, model, scenes, tokens_per_scene, bank, mapping, cfg, out_dir)

    grid = model.config.image_size // model.config.patch_size
    manifest = {
        "model_id": job.model_id
        or f"{job.architecture}-seed{job.seed}" + ("-ckpt" if job.checkpoint else ""),
        "layer_count": layer_count,
        "embed_dim": model.config.hidden_size,
        "proj_dim": model.config.projection_dim,
        "patch_size": model.config.patch_size,
        "head_count": model.config.num_attention_heads,
        "grid_h": grid,
        "grid_w": grid,
        "entries": writer.entries,
        "images": images,
        "text": {
            "class_names": [f"class{i}" for i in range(job.num_classes)],
            "query_to_class": mapping,
        },
        "export_config": {
            **cfg,
            "notes": {
                "weights": "checkpoint" if job.checkpoint else "seeded-random",
                "vfm_source": "synthetic-structured",
                "min_label_margin": min_margin,
                **job.extra_notes,
            },
        },
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return out_dir / "manifest.json"


@torch.no_grad()
def export_golden(job, model, scenes, tokens_per_scene, bank, mapping, cfg, out_dir) -> float:
    """Dump every reference intermediate; returns the worst label margin."""
    text = torch.from_numpy(bank)
    pi = np.asarray(mapping)
    min_margin = float("inf")
    for scene, tokens in zip(scenes, tokens_per_scene):
        stages = run_reference(
            model,
            tokens,
            scene.features,
            scene.patch_masks if len(scene.patch_masks) else None,
            scene.pixel_masks if len(scene.pixel_masks) else None,
            text,
            pi,
            job.num_classes,
            job.golden_pixel,
            cfg,
        )
        margin = float(stages.pop("_label_margin").min())
        min_margin = min(min_margin, margin)
        bundle = Path(out_dir) / "golden" / scene.image_id
        for stage, values in stages.items():
            save_tensor(bundle / f"{stage}.dten", values)
    return min_margin
