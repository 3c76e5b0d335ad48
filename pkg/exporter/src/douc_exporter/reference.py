"""Reference realization of the full pipeline in torch.

This is the exporter's independent implementation whose intermediates
populate the golden bundles.  Every semantic choice of the engine has a
line-for-line counterpart here: pre-norm blocks with exact-erf GELU and
per-head 1/sqrt(head_dim) scaling, gate weights from min-max normalized l2
scores through a centered temperature sigmoid applied to block outputs,
the -1e4 affinity sentinel before the temperature softmax, smallest-area
instance overlap resolution, value/residual resampling with half-pixel
bilinear interpolation, the value matrix's own CLS row passing through the
replaced aggregation untouched, fusion at the larger grid, per-query CLS
prior, max collapse, within-mask mean post-correction, and lowest-index
argmax tie-breaking.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

MASK_SENTINEL = -1e4


def resolve_mask_labels(masks: np.ndarray) -> np.ndarray:
    """Smallest-area mask claims each cell; ties to the lowest index; -1 uncovered."""
    k = masks.shape[0]
    labels = np.full(masks.shape[1:], -1, dtype=np.int64)
    areas = masks.reshape(k, -1).sum(axis=1)
    for idx in sorted(range(k), key=lambda i: (areas[i], i)):
        claim = (masks[idx] > 0.5) & (labels < 0)
        labels[claim] = idx
    return labels


def _linear(x: torch.Tensor, module) -> torch.Tensor:
    return x @ module.weight.T + module.bias


def _attention(x: torch.Tensor, layer) -> torch.Tensor:
    attn = layer.self_attn
    n, v = x.shape
    heads = attn.num_heads
    dh = v // heads
    q = _linear(x, attn.q_proj).reshape(n, heads, dh).transpose(0, 1)
    k = _linear(x, attn.k_proj).reshape(n, heads, dh).transpose(0, 1)
    val = _linear(x, attn.v_proj).reshape(n, heads, dh).transpose(0, 1)
    scores = q @ k.transpose(1, 2) / (dh**0.5)
    probs = torch.softmax(scores, dim=-1)
    ctx = (probs @ val).transpose(0, 1).reshape(n, v)
    return _linear(ctx, attn.out_proj)


def _mlp(x: torch.Tensor, layer) -> torch.Tensor:
    return _linear(F.gelu(_linear(x, layer.mlp.fc1)), layer.mlp.fc2)


def _block(x: torch.Tensor, layer) -> torch.Tensor:
    x = x + _attention(layer.layer_norm1(x), layer)
    return x + _mlp(layer.layer_norm2(x), layer)


def _gate(x: torch.Tensor, alpha: float, temperature: float) -> torch.Tensor:
    scores = torch.linalg.norm(x[1:], dim=1)
    lo, hi = scores.min(), scores.max()
    if hi > lo:
        s_hat = (scores - lo) / (hi - lo)
    else:
        s_hat = torch.full_like(scores, 0.5)
    weights = torch.sigmoid((s_hat - 0.5) / temperature)
    factors = (1.0 - alpha) + alpha * weights
    out = x.clone()
    out[1:] = out[1:] * factors[:, None]
    return out


def forward_tokens(model, tokens: torch.Tensor, cfg, gated: bool) -> torch.Tensor:
    layers = model.vision_model.encoder.layers
    gate_layers = set(cfg["og"]["layers"]) if gated else set()
    x = tokens
    for i, layer in enumerate(layers):
        x = _block(x, layer)
        if i in gate_layers:
            x = _gate(x, cfg["og"]["alpha"], cfg["og"]["temperature"])
    return x


def project_dense(model, tokens: torch.Tensor) -> torch.Tensor:
    normed = model.vision_model.post_layernorm(tokens)
    return normed @ model.visual_projection.weight.T


def _unit_rows(x: torch.Tensor) -> torch.Tensor:
    norms = torch.linalg.norm(x, dim=1, keepdim=True)
    return x / torch.clamp(norms, min=1e-12)


def _resample_patches(rows: torch.Tensor, in_grid, out_grid) -> torch.Tensor:
    """(n_in, v) patch rows -> (n_out, v) via half-pixel bilinear resize."""
    if tuple(in_grid) == tuple(out_grid):
        return rows.clone()
    gh, gw = in_grid
    grid = rows.reshape(1, gh, gw, -1).permute(0, 3, 1, 2)
    out = F.interpolate(grid, size=tuple(out_grid), mode="bilinear", align_corners=False)
    return out.permute(0, 2, 3, 1).reshape(out_grid[0] * out_grid[1], -1)


def proxy_affinity(features: np.ndarray, patch_masks, cfg) -> torch.Tensor:
    fh, fw, fc = features.shape
    n = fh * fw
    if not cfg["fade"]["vfm"]:
        return torch.full((n, n), 1.0 / n, dtype=torch.float32)
    flat = _unit_rows(torch.from_numpy(features.reshape(n, fc)))
    s = flat @ flat.T
    if cfg["fade"]["mask_mode"] == "instance" and patch_masks is not None and len(patch_masks):
        labels = resolve_mask_labels(patch_masks).reshape(-1)
        if cfg["fade"]["uncovered_policy"] == "self-only":
            uncovered = labels < 0
            labels = labels.copy()
            labels[uncovered] = -(np.flatnonzero(uncovered) + 2)
        groups = torch.from_numpy(labels)
        allowed = groups[:, None] == groups[None, :]
        s = torch.where(allowed, s, torch.tensor(MASK_SENTINEL, dtype=torch.float32))
    return torch.softmax(cfg["fade"]["tau"] * s, dim=-1)


def _resize_logits(logits: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    if logits.shape[1:] == (out_h, out_w):
        return logits
    return F.interpolate(
        logits[None], size=(out_h, out_w), mode="bilinear", align_corners=False
    )[0]


@torch.no_grad()
def fade_dense_embeddings(model, tokens, features, patch_masks, cfg) -> torch.Tensor:
    """Normalized joint-space patch embeddings of the proxy branch, (n, d)."""
    grid = model.config.image_size // model.config.patch_size
    fh, fw, _ = features.shape
    layers = model.vision_model.encoder.layers
    x = tokens
    for layer in layers[:-1]:
        x = _block(x, layer)
    last = layers[-1]
    values = _linear(last.layer_norm1(x), last.self_attn.v_proj)
    affinity = proxy_affinity(features, patch_masks, cfg)
    v_proxy = affinity @ _resample_patches(values[1:], (grid, grid), (fh, fw))
    aggregated = torch.cat([values[:1], v_proxy])
    attn_out = _linear(aggregated, last.self_attn.out_proj)
    residual = torch.cat([x[:1], _resample_patches(x[1:], (grid, grid), (fh, fw))])
    x1 = residual + attn_out
    x2 = x1 + _mlp(last.layer_norm2(x1), last)
    return _unit_rows(project_dense(model, x2)[1:])


@torch.no_grad()
def run_reference(
    model,
    tokens: torch.Tensor,
    features: np.ndarray,
    patch_masks,
    pixel_masks,
    text: torch.Tensor,
    query_to_class: np.ndarray,
    num_classes: int,
    pixel_hw: tuple[int, int],
    cfg: dict,
) -> dict:
    """All golden stages for one image; returns numpy float32 arrays."""
    grid = model.config.image_size // model.config.patch_size
    gh = gw = grid
    fh, fw, _ = features.shape
    stages: dict[str, np.ndarray] = {}

    plain = forward_tokens(model, tokens, cfg, gated=False)
    stages["pre_gate_tokens"] = plain.numpy().astype(np.float32)
    gated = forward_tokens(model, tokens, cfg, gated=True)
    stages["post_gate_tokens"] = gated.numpy().astype(np.float32)

    z_og = project_dense(model, gated)
    og_flat = _unit_rows(z_og[1:]) @ text.T
    l_og = og_flat.reshape(gh, gw, -1).permute(2, 0, 1)
    stages["logits_og"] = l_og.numpy().astype(np.float32)

    cls = z_og[0]
    prior = text @ (cls / torch.clamp(torch.linalg.norm(cls), min=1e-12))

    # proxy branch: ungated stream to the last block, aggregation replaced
    x = tokens
    layers = model.vision_model.encoder.layers
    for layer in layers[:-1]:
        x = _block(x, layer)
    last = layers[-1]
    values = _linear(last.layer_norm1(x), last.self_attn.v_proj)
    stages["last_v"] = values.numpy().astype(np.float32)

    affinity = proxy_affinity(features, patch_masks, cfg)
    stages["proxy_affinity"] = affinity.numpy().astype(np.float32)

    v_res = _resample_patches(values[1:], (gh, gw), (fh, fw))
    v_proxy = affinity @ v_res
    aggregated = torch.cat([values[:1], v_proxy])
    attn_out = _linear(aggregated, last.self_attn.out_proj)
    residual = torch.cat([x[:1], _resample_patches(x[1:], (gh, gw), (fh, fw))])
    x1 = residual + attn_out
    x2 = x1 + _mlp(last.layer_norm2(x1), last)
    z_fade = project_dense(model, x2)
    fade_flat = _unit_rows(z_fade[1:]) @ text.T
    l_fade = fade_flat.reshape(fh, fw, -1).permute(2, 0, 1)
    stages["logits_fade"] = l_fade.numpy().astype(np.float32)

    # fusion at the larger grid, then the CLS prior
    oh, ow = max(gh, fh), max(gw, fw)
    og_r = _resize_logits(l_og, oh, ow)
    fade_r = _resize_logits(l_fade, oh, ow)
    a_og, a_fade = cfg["fusion"]["alpha_og"], cfg["fusion"]["alpha_fade"]
    if a_fade == 0:
        fused = og_r if a_og == 1 else a_og * og_r
    elif a_og == 0:
        fused = fade_r if a_fade == 1 else a_fade * fade_r
    else:
        fused = a_fade * fade_r + a_og * og_r
    lam = cfg["fusion"]["lambda_cls"]
    if lam != 0:
        fused = fused + lam * prior[:, None, None]
    stages["logits_fused"] = fused.numpy().astype(np.float32)

    # collapse queries -> classes (max or mean)
    pi = np.asarray(query_to_class)
    class_logits = []
    for c in range(num_classes):
        members = fused[torch.from_numpy(pi == c)]
        if cfg["fusion"]["collapse"] == "max":
            class_logits.append(members.max(dim=0).values)
        else:
            class_logits.append(members.mean(dim=0))
    class_map = torch.stack(class_logits)

    ph, pw = pixel_hw
    pixel_logits = _resize_logits(class_map, ph, pw)
    if cfg["fusion"]["post_correct"] and pixel_masks is not None and len(pixel_masks):
        labels = resolve_mask_labels(pixel_masks)
        flat = pixel_logits.reshape(num_classes, -1)
        lab = labels.reshape(-1)
        for inst in np.unique(lab):
            if inst < 0:
                continue
            idx = torch.from_numpy(np.flatnonzero(lab == inst))
            mean = flat[:, idx].mean(dim=1)
            flat[:, idx] = mean[:, None]
        pixel_logits = flat.reshape(num_classes, ph, pw)

    logits_np = pixel_logits.numpy().astype(np.float32)
    label_map = np.argmax(logits_np, axis=0)  # lowest index wins ties
    stages["label_map"] = label_map.astype(np.float32)

    sorted_logits = np.sort(logits_np, axis=0)
    stages["_label_margin"] = (
        sorted_logits[-1] - sorted_logits[-2] if num_classes > 1 else np.ones_like(label_map)
    )
    return stages
