"""Minimal pre-norm vision-transformer encoder with surgical hook points.

The block order is norm -> attention -> residual -> norm -> FFN -> residual,
with exact-erf GELU in the FFN and per-head attention scale
``1/sqrt(embed_dim / head_count)``.  Two hook points support the two
inference branches:

* per-layer token transforms applied to a block's output (token gating), and
* replacement of the final block's ``A @ V`` aggregation by a caller-supplied
  aggregation (proxy attention), keeping the output projection, residual and
  FFN of that block intact.  The replacement may change the patch-grid
  resolution; the residual stream is bilinearly resampled to match.

Positional embeddings are expected to be baked into the input tokens (or
added from a manifest tensor by the caller); no positional interpolation
happens here.  Weights are immutable after load and safe to share across
concurrent forward passes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

from .errors import ShapeError
from .tensor_ops import as_f32, bilinear_resize, layer_norm, matmul, row_softmax

_SQRT2 = np.sqrt(np.float64(2.0))


@dataclass
class TokenSequence:
    """CLS token plus patch tokens in row-major grid order.

    ``tokens`` has shape ``(L+1, v)`` with the class token at row 0 and
    ``L == grid_h * grid_w`` patch rows following.
    """

    tokens: np.ndarray
    grid_h: int
    grid_w: int

    def __post_init__(self):
        self.tokens = as_f32(self.tokens, "tokens", 2)
        if self.grid_h < 0 or self.grid_w < 0:
            raise ShapeError(f"token grid {self.grid_h}x{self.grid_w} has negative dims")
        if self.tokens.shape[0] != self.grid_h * self.grid_w + 1:
            raise ShapeError(
                f"{self.tokens.shape[0]} tokens do not match grid "
                f"{self.grid_h}x{self.grid_w} plus CLS"
            )

    @property
    def patch_count(self) -> int:
        return self.tokens.shape[0] - 1

    @property
    def embed_dim(self) -> int:
        return self.tokens.shape[1]

    def patches(self) -> np.ndarray:
        return self.tokens[1:]

    def cls(self) -> np.ndarray:
        return self.tokens[0]


@dataclass
class BlockWeights:
    """Parameters of one transformer block.

    Linear weights are stored ``(in, out)`` so application is ``x @ W + b``.
    The attention projection biases default to zero vectors when a model has
    none.
    """

    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_out: np.ndarray
    b_q: np.ndarray
    b_k: np.ndarray
    b_v: np.ndarray
    b_out: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    ffn_w1: np.ndarray
    ffn_b1: np.ndarray
    ffn_w2: np.ndarray
    ffn_b2: np.ndarray
    head_count: int

    def __post_init__(self):
        v = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v", "w_out"):
            if getattr(self, name).shape != (v, v):
                raise ShapeError(f"{name} must be {v}x{v}, got {getattr(self, name).shape}")
        if self.head_count < 1 or v % self.head_count != 0:
            raise ShapeError(f"head_count {self.head_count} does not divide dim {v}")
        hidden = self.ffn_w1.shape[1]
        if self.ffn_w1.shape != (v, hidden) or self.ffn_w2.shape != (hidden, v):
            raise ShapeError("FFN weight shapes are inconsistent with the embed dim")

    @property
    def embed_dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.head_count


@dataclass(frozen=True)
class LayerHook:
    """Token-sequence transform applied to the output of block ``layer_index``."""

    layer_index: int
    transform: Callable[[TokenSequence], TokenSequence]


def gelu(m: np.ndarray) -> np.ndarray:
    """Exact-erf GELU: ``0.5 * x * (1 + erf(x / sqrt(2)))``."""
    x = as_f32(m, "gelu input").astype(np.float64)
    return (0.5 * x * (1.0 + erf(x / _SQRT2))).astype(np.float32)


def _attention_core(x: np.ndarray, w: BlockWeights, return_probs: bool = False):
    """Multi-head attention on raw (already normalized) tokens, incl. W_out."""
    q = matmul(x, w.w_q) + w.b_q
    k = matmul(x, w.w_k) + w.b_k
    v = matmul(x, w.w_v) + w.b_v
    dh = w.head_dim
    scale = 1.0 / np.sqrt(float(dh))
    ctx = np.empty_like(x)
    probs = [] if return_probs else None
    for h in range(w.head_count):
        sl = slice(h * dh, (h + 1) * dh)
        scores = matmul(q[:, sl], k[:, sl].T)
        a = row_softmax(scores, scale)
        if return_probs:
            probs.append(a)
        ctx[:, sl] = matmul(a, v[:, sl])
    out = matmul(ctx, w.w_out) + w.b_out
    if return_probs:
        return out, np.stack(probs)
    return out


def self_attention(x: TokenSequence, w: BlockWeights, return_probs: bool = False):
    """Multi-head self-attention of the given tokens, including W_out.

    With ``return_probs`` also returns the per-head attention matrices,
    shaped ``(head_count, L+1, L+1)``.
    """
    if x.embed_dim != w.embed_dim:
        raise ShapeError(f"token dim {x.embed_dim} != weight dim {w.embed_dim}")
    result = _attention_core(x.tokens, w, return_probs)
    if return_probs:
        out, probs = result
        return TokenSequence(out, x.grid_h, x.grid_w), probs
    return TokenSequence(result, x.grid_h, x.grid_w)


def _ffn(x: np.ndarray, w: BlockWeights) -> np.ndarray:
    h = gelu(matmul(x, w.ffn_w1) + w.ffn_b1)
    return matmul(h, w.ffn_w2) + w.ffn_b2


def block_values(x: TokenSequence, w: BlockWeights, ln_eps: float = 1e-5) -> np.ndarray:
    """The block's value matrix: ``LN1(x) @ W_V + b_V``, before aggregation."""
    h = layer_norm(x.tokens, w.ln1_gamma, w.ln1_beta, ln_eps)
    return matmul(h, w.w_v) + w.b_v


def block_forward(x: TokenSequence, w: BlockWeights, ln_eps: float = 1e-5) -> TokenSequence:
    """One standard pre-norm block: two residually added sublayers."""
    h = layer_norm(x.tokens, w.ln1_gamma, w.ln1_beta, ln_eps)
    x1 = x.tokens + _attention_core(h, w)
    x2 = x1 + _ffn(layer_norm(x1, w.ln2_gamma, w.ln2_beta, ln_eps), w)
    return TokenSequence(x2, x.grid_h, x.grid_w)


def resample_token_rows(
    rows: np.ndarray, in_grid: tuple[int, int], out_grid: tuple[int, int]
) -> np.ndarray:
    """Bilinearly resample CLS+patch rows to a new patch grid (CLS untouched)."""
    gh, gw = in_grid
    oh, ow = out_grid
    if rows.shape[0] != gh * gw + 1:
        raise ShapeError(f"{rows.shape[0]} rows do not match grid {gh}x{gw} plus CLS")
    if (gh, gw) == (oh, ow):
        return rows.copy()
    v = rows.shape[1]
    grid = rows[1:].reshape(gh, gw, v)
    resized = bilinear_resize(grid, oh, ow).reshape(oh * ow, v)
    return np.concatenate([rows[:1], resized], axis=0)


# Aggregator: (values (L+1, v), block input) -> (aggregated (1+n, v), (out_h, out_w))
Aggregator = Callable[[np.ndarray, TokenSequence], tuple[np.ndarray, tuple[int, int]]]


def forward(
    x0: TokenSequence,
    blocks: Sequence[BlockWeights],
    hooks: Sequence[LayerHook] = (),
    last_block_mode: str = "standard",
    aggregator: Optional[Aggregator] = None,
    ln_eps: float = 1e-5,
) -> tuple[TokenSequence, Optional[np.ndarray]]:
    """Run the encoder stack; returns final tokens and (maybe) the last V.

    ``last_block_mode``:

    * ``"standard"``       - plain forward, second result is None.
    * ``"capture_values"`` - plain forward; also returns the final block's
      value matrix ``LN1(x) @ W_V + b_V``.
    * ``"replaced"``       - the final block's ``A @ V`` aggregation is
      replaced by ``aggregator``; W_out, residual and FFN still run.  The
      aggregator may change the patch grid, in which case the residual
      stream is bilinearly resampled to the new grid.  The aggregated matrix
      must keep the CLS row at index 0.

    Hooks run on the output of their block, in the order given.
    """
    if last_block_mode not in ("standard", "capture_values", "replaced"):
        raise ValueError(f"unknown last_block_mode '{last_block_mode}'")
    if last_block_mode == "replaced" and aggregator is None:
        raise ValueError("replaced mode requires an aggregator")
    if not blocks:
        raise ShapeError("need at least one transformer block")
    hooks_at: dict[int, list[LayerHook]] = {}
    for hook in hooks:
        if not 0 <= hook.layer_index < len(blocks):
            raise ShapeError(
                f"hook layer {hook.layer_index} out of range for {len(blocks)} blocks"
            )
        hooks_at.setdefault(hook.layer_index, []).append(hook)

    x = x0
    captured: Optional[np.ndarray] = None
    last = len(blocks) - 1
    for i, w in enumerate(blocks):
        if i == last and last_block_mode != "standard":
            values = block_values(x, w, ln_eps)
            captured = values
            if last_block_mode == "replaced":
                aggregated, out_grid = aggregator(values, x)
                aggregated = as_f32(aggregated, "aggregated values", 2)
                if aggregated.shape != (out_grid[0] * out_grid[1] + 1, w.embed_dim):
                    raise ShapeError(
                        f"aggregator returned {aggregated.shape}, expected "
                        f"({out_grid[0] * out_grid[1] + 1}, {w.embed_dim})"
                    )
                attn_out = matmul(aggregated, w.w_out) + w.b_out
                residual = resample_token_rows(x.tokens, (x.grid_h, x.grid_w), out_grid)
                x1 = residual + attn_out
                x2 = x1 + _ffn(layer_norm(x1, w.ln2_gamma, w.ln2_beta, ln_eps), w)
                x = TokenSequence(x2, out_grid[0], out_grid[1])
            else:
                x = block_forward(x, w, ln_eps)
        else:
            x = block_forward(x, w, ln_eps)
        for hook in hooks_at.get(i, ()):
            x = hook.transform(x)
    return x, captured


def project_to_joint_space(
    x: TokenSequence,
    post_gamma: np.ndarray,
    post_beta: np.ndarray,
    w_proj: np.ndarray,
    ln_eps: float = 1e-5,
) -> np.ndarray:
    """Post-layer-norm then linear projection into the joint space.

    Returns ``(L+1, d)``; rows are NOT l2-normalized here.
    """
    w_proj = as_f32(w_proj, "w_proj", 2)
    if w_proj.shape[0] != x.embed_dim:
        raise ShapeError(f"projection expects dim {w_proj.shape[0]}, tokens have {x.embed_dim}")
    normed = layer_norm(x.tokens, post_gamma, post_beta, ln_eps)
    return matmul(normed, w_proj)
