"""Per-image orchestration of the full two-branch pipeline.

Assembles model assets from a manifest, runs the gated branch and the
proxy branch, fuses at the logit level, applies the CLS prior, collapses
queries to classes, upsamples, post-corrects within instances, and predicts
the label map.  Also provides the golden-bundle comparison used by the
verification command.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ManifestError, PipelineError
from .fusion import (
    FusionConfig,
    TextBank,
    add_cls_prior,
    align_and_fuse,
    cls_prior_logits,
    collapse_queries,
    instance_post_correct,
    predict,
    upsample_logits,
)
from .gating import GateConfig, make_gate_hooks, og_dense_logits
from .manifest import Manifest
from .proxy import InstanceMaskSet, ProxyConfig, fade_dense_logits
from .tensorfile import read_tensor, write_tensor
from .vit import BlockWeights, TokenSequence, forward, project_to_joint_space

BLOCK_ROLES = {
    "ln1_gamma": "ln1.gamma",
    "ln1_beta": "ln1.beta",
    "w_q": "attn.wq",
    "w_k": "attn.wk",
    "w_v": "attn.wv",
    "w_out": "attn.wo",
    "ln2_gamma": "ln2.gamma",
    "ln2_beta": "ln2.beta",
    "ffn_w1": "mlp.w1",
    "ffn_b1": "mlp.b1",
    "ffn_w2": "mlp.w2",
    "ffn_b2": "mlp.b2",
}
OPTIONAL_BIAS_ROLES = {"b_q": "attn.bq", "b_k": "attn.bk", "b_v": "attn.bv", "b_out": "attn.bo"}

GOLDEN_STAGES = (
    "pre_gate_tokens",
    "post_gate_tokens",
    "last_v",
    "proxy_affinity",
    "logits_og",
    "logits_fade",
    "logits_fused",
    "label_map",
)

DEFAULT_STAGE_TOLERANCE = 1e-3
STAGE_TOLERANCES = {stage: DEFAULT_STAGE_TOLERANCE for stage in GOLDEN_STAGES}
STAGE_TOLERANCES["label_map"] = 0.0


@dataclass
class ModelAssets:
    """Loaded, immutable model pieces; shareable across concurrent images.

    ``manifest`` may be None for models assembled in memory (test harness).
    """

    manifest: Optional[Manifest]
    blocks: list[BlockWeights]
    post_gamma: np.ndarray
    post_beta: np.ndarray
    w_proj: np.ndarray
    text: TextBank
    pos_embed: Optional[np.ndarray]
    ln_eps: float = 1e-5

    @property
    def grid(self) -> tuple[int, int]:
        return self.manifest.grid_h, self.manifest.grid_w


@dataclass
class ImageInputs:
    image_id: str
    tokens: TokenSequence
    features: np.ndarray
    masks: Optional[InstanceMaskSet]
    gt: Optional[np.ndarray]
    pixel_h: int
    pixel_w: int


@dataclass
class PipelineResult:
    image_id: str
    label_map: np.ndarray
    intermediates: dict[str, np.ndarray] = field(default_factory=dict)


def load_model_assets(manifest: Manifest) -> ModelAssets:
    """Assemble weights and the text bank; names the missing role on failure."""
    blocks = []
    for i in range(manifest.layer_count):
        params = {}
        for attr, suffix in BLOCK_ROLES.items():
            role = f"blocks.{i}.{suffix}"
            if not manifest.has(role):
                raise ManifestError(f"manifest is missing required role '{role}'")
            params[attr] = manifest.load(role)
        for attr, suffix in OPTIONAL_BIAS_ROLES.items():
            role = f"blocks.{i}.{suffix}"
            params[attr] = (
                manifest.load(role)
                if manifest.has(role)
                else np.zeros(manifest.embed_dim, dtype=np.float32)
            )
        blocks.append(BlockWeights(head_count=manifest.head_count, **params))

    for role in ("post_ln.gamma", "post_ln.beta", "proj", "text.embeddings"):
        if not manifest.has(role):
            raise ManifestError(f"manifest is missing required role '{role}'")

    embeddings = manifest.load("text.embeddings")
    meta = manifest.text_meta or {}
    query_to_class = meta.get("query_to_class", list(range(embeddings.shape[0])))
    class_names = meta.get("class_names", [])
    text = TextBank(embeddings, query_to_class, class_names)

    return ModelAssets(
        manifest=manifest,
        blocks=blocks,
        post_gamma=manifest.load("post_ln.gamma"),
        post_beta=manifest.load("post_ln.beta"),
        w_proj=manifest.load("proj"),
        text=text,
        pos_embed=manifest.load("pos_embed") if manifest.has("pos_embed") else None,
        ln_eps=float(manifest.export_config.get("ln_eps", 1e-5)),
    )


def load_image_inputs(assets: ModelAssets, image_id: str) -> ImageInputs:
    manifest = assets.manifest
    entry = manifest.image(image_id)
    tokens = manifest.load(f"images.{image_id}.tokens")
    if assets.pos_embed is not None:
        tokens = tokens + assets.pos_embed
    features = manifest.load(f"images.{image_id}.features")

    masks = None
    patch_role = f"images.{image_id}.masks_patch"
    if manifest.has(patch_role):
        pixel_role = f"images.{image_id}.masks_pixel"
        masks = InstanceMaskSet(
            manifest.load(patch_role),
            pixel_masks=manifest.load(pixel_role) if manifest.has(pixel_role) else None,
        )

    gt_role = f"images.{image_id}.gt"
    gt = manifest.load(gt_role) if manifest.has(gt_role) else None

    return ImageInputs(
        image_id=image_id,
        tokens=TokenSequence(tokens, manifest.grid_h, manifest.grid_w),
        features=features,
        masks=masks,
        gt=gt,
        pixel_h=entry.pixel_h,
        pixel_w=entry.pixel_w,
    )


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, str(exc)) from exc


def run_image(
    assets: ModelAssets,
    image: ImageInputs,
    og_cfg: GateConfig,
    proxy_cfg: ProxyConfig,
    fusion_cfg: FusionConfig,
    include_pre_gate: bool = False,
) -> PipelineResult:
    """Full two-branch inference for one image."""
    inter: dict[str, np.ndarray] = {}

    if include_pre_gate:
        plain, _ = _stage(
            "pre-gate-forward", forward, image.tokens, assets.blocks, ln_eps=assets.ln_eps
        )
        inter["pre_gate_tokens"] = plain.tokens

    hooks = make_gate_hooks(og_cfg)
    tokens_og, _ = _stage(
        "og-forward", forward, image.tokens, assets.blocks, hooks=hooks, ln_eps=assets.ln_eps
    )
    inter["post_gate_tokens"] = tokens_og.tokens

    l_og = _stage(
        "og-logits",
        og_dense_logits,
        tokens_og,
        assets.post_gamma,
        assets.post_beta,
        assets.w_proj,
        assets.text.embeddings,
        assets.ln_eps,
    )
    inter["logits_og"] = l_og

    projected_og = _stage(
        "cls-prior",
        project_to_joint_space,
        tokens_og,
        assets.post_gamma,
        assets.post_beta,
        assets.w_proj,
        assets.ln_eps,
    )
    l_cls = _stage("cls-prior", cls_prior_logits, projected_og[0], assets.text)

    l_fade, extras = fade_dense_logits(
        image.tokens,
        assets.blocks,
        assets.post_gamma,
        assets.post_beta,
        assets.w_proj,
        image.features,
        image.masks,
        assets.text.embeddings,
        proxy_cfg,
        assets.ln_eps,
    )
    inter["logits_fade"] = l_fade
    inter["proxy_affinity"] = extras["proxy_affinity"]
    inter["last_v"] = extras["last_v"]

    fused = _stage("fusion", align_and_fuse, l_og, l_fade, fusion_cfg)
    fused = _stage("fusion", add_cls_prior, fused, l_cls, fusion_cfg.lambda_cls)
    inter["logits_fused"] = fused

    classes = _stage(
        "collapse",
        collapse_queries,
        fused,
        assets.text.query_to_class,
        assets.text.num_classes,
        fusion_cfg.collapse,
    )
    pixel = _stage("upsample", upsample_logits, classes, image.pixel_h, image.pixel_w)
    if fusion_cfg.post_correct and image.masks is not None and image.masks.pixel_masks is not None:
        pixel = _stage("post-correct", instance_post_correct, pixel, image.masks)
    labels = _stage("predict", predict, pixel, image.pixel_h, image.pixel_w)
    inter["label_map"] = labels.astype(np.float32)

    return PipelineResult(image_id=image.image_id, label_map=labels, intermediates=inter)


def write_intermediates(result: PipelineResult, out_dir) -> None:
    """Dump every intermediate as a tensor file under ``out_dir/image_id/``."""
    bundle = Path(out_dir) / result.image_id
    bundle.mkdir(parents=True, exist_ok=True)
    for stage, values in result.intermediates.items():
        write_tensor(bundle / f"{stage}.dten", values)


@dataclass
class StageComparison:
    stage: str
    max_abs: float
    tolerance: float
    passed: bool
    note: str = ""


def compare_to_golden(
    result: PipelineResult, bundle_dir, tolerances: dict[str, float] | None = None
) -> list[StageComparison]:
    """Compare computed intermediates against a golden bundle directory.

    The bundle holds ``<bundle_dir>/<image_id>/<stage>.dten`` files.  A stage
    present in the bundle but missing from the result (or vice versa) is a
    named failure, not a crash.
    """
    tols = dict(STAGE_TOLERANCES)
    if tolerances:
        tols.update(tolerances)
    bundle = Path(bundle_dir) / result.image_id
    out = []
    for stage in GOLDEN_STAGES:
        path = bundle / f"{stage}.dten"
        tol = tols[stage]
        if not path.is_file():
            out.append(StageComparison(stage, float("nan"), tol, False, "missing in bundle"))
            continue
        if stage not in result.intermediates:
            out.append(StageComparison(stage, float("nan"), tol, False, "not computed"))
            continue
        got = np.asarray(result.intermediates[stage], dtype=np.float32)
        want = read_tensor(path)
        if got.shape != want.shape:
            out.append(
                StageComparison(
                    stage,
                    float("nan"),
                    tol,
                    False,
                    f"shape {got.shape} != bundle {want.shape}",
                )
            )
            continue
        max_abs = float(np.max(np.abs(got.astype(np.float64) - want.astype(np.float64)))) if got.size else 0.0
        out.append(StageComparison(stage, max_abs, tol, max_abs <= tol))
    return out
