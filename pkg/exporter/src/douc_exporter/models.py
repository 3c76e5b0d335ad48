"""Frozen CLIP vision models and their weight mapping into engine roles.

Models are genuine ``transformers`` CLIP vision towers.  Without a local
checkpoint they are seeded randomly at the requested architecture (the
pretrained weights are not downloadable in an offline environment); with
``checkpoint`` pointing at a local directory the real weights load instead.

The FFN activation is pinned to exact-erf GELU to match the engine's dense
numerics; checkpoints trained with quick-gelu would need that activation
instead and are rejected loudly.
"""

from __future__ import annotations

import torch
from transformers import CLIPVisionConfig, CLIPVisionModelWithProjection

ARCHITECTURES = {
    "vit-b16": dict(
        hidden_size=768,
        intermediate_size=3072,
        num_hidden_layers=12,
        num_attention_heads=12,
        image_size=224,
        patch_size=16,
        projection_dim=512,
    ),
    "tiny-2layer": dict(
        hidden_size=8,
        intermediate_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        image_size=8,
        patch_size=2,
        projection_dim=4,
    ),
}


def build_vision_model(
    architecture: str,
    seed: int = 0,
    checkpoint: str | None = None,
    initializer_range: float = 0.05,
    final_value_gain: float = 4.0,
) -> CLIPVisionModelWithProjection:
    """A frozen CLIP vision tower: local checkpoint or seeded random weights.

    Randomly initialized towers differ from trained ones in one way that
    matters here: after a dozen residual additions the last block's value
    pathway is an order of magnitude weaker than the residual stream, so the
    dense behavior of the final attention is invisible.  Trained CLIPs carry
    most of their dense semantics precisely through that pathway, so the
    synthetic init scales the final block's value/output projections up
    (``final_value_gain``) to restore a realistic balance.  This is a
    property of the exported weights, not of the pipeline.
    """
    if checkpoint is not None:
        model = CLIPVisionModelWithProjection.from_pretrained(checkpoint)
        if model.config.hidden_act not in ("gelu",):
            raise ValueError(
                f"checkpoint uses hidden_act={model.config.hidden_act!r}; "
                "the engine's numerics require exact-erf gelu"
            )
    else:
        if architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture '{architecture}'")
        config = CLIPVisionConfig(
            hidden_act="gelu",
            layer_norm_eps=1e-5,
            attn_implementation="eager",
            initializer_range=initializer_range,
            **ARCHITECTURES[architecture],
        )
        torch.manual_seed(seed)
        model = CLIPVisionModelWithProjection(config)
        with torch.no_grad():
            last = model.vision_model.encoder.layers[-1].self_attn
            last.v_proj.weight.mul_(final_value_gain)
            last.out_proj.weight.mul_(final_value_gain)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def block_role_tensors(model, layer_index: int) -> dict:
    """Engine role suffix -> tensor for one encoder block.

    The engine stores linear weights ``(in, out)``; torch keeps ``(out, in)``.
    """
    layer = model.vision_model.encoder.layers[layer_index]
    attn = layer.self_attn
    return {
        "ln1.gamma": layer.layer_norm1.weight,
        "ln1.beta": layer.layer_norm1.bias,
        "attn.wq": attn.q_proj.weight.T,
        "attn.bq": attn.q_proj.bias,
        "attn.wk": attn.k_proj.weight.T,
        "attn.bk": attn.k_proj.bias,
        "attn.wv": attn.v_proj.weight.T,
        "attn.bv": attn.v_proj.bias,
        "attn.wo": attn.out_proj.weight.T,
        "attn.bo": attn.out_proj.bias,
        "ln2.gamma": layer.layer_norm2.weight,
        "ln2.beta": layer.layer_norm2.bias,
        "mlp.w1": layer.mlp.fc1.weight.T,
        "mlp.b1": layer.mlp.fc1.bias,
        "mlp.w2": layer.mlp.fc2.weight.T,
        "mlp.b2": layer.mlp.fc2.bias,
    }


def head_role_tensors(model) -> dict:
    vm = model.vision_model
    return {
        "post_ln.gamma": vm.post_layernorm.weight,
        "post_ln.beta": vm.post_layernorm.bias,
        "proj": model.visual_projection.weight.T,
    }


@torch.no_grad()
def embed_image(model, pixel_values: torch.Tensor) -> torch.Tensor:
    """Patch-embed + positional embedding + pre-layer-norm, squeezed to (L+1, v).

    This bakes everything ahead of the first encoder block into the exported
    token tensor, which is where the engine picks up.
    """
    vm = model.vision_model
    hidden = vm.embeddings(pixel_values)
    hidden = vm.pre_layrnorm(hidden)
    return hidden[0]
