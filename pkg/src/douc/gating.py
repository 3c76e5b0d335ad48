"""Token-reliability gating branch.

Patch tokens are scored by their l2 norm, mapped to soft weights in (0, 1)
by a min-max normalization followed by a centered sigmoid with temperature,
and attenuated in residual style: token i is scaled by
``(1 - alpha) + alpha * w_i``.  The class token is never gated.  Gating runs
as layer hooks inside the encoder forward pass; the gated final tokens feed
the dense cosine-similarity logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor_ops import l2_normalize_rows, matmul
from .vit import LayerHook, TokenSequence, project_to_joint_space


@dataclass(frozen=True)
class GateConfig:
    """Which layers to gate, how hard, and how sharp the weight transform is."""

    layer_indices: tuple[int, ...]
    gate_strength: float = 0.5
    gate_temperature: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.gate_strength <= 1.0:
            raise ValueError(f"gate_strength {self.gate_strength} outside [0, 1]")
        if self.gate_temperature <= 0.0:
            raise ValueError(f"gate_temperature {self.gate_temperature} must be > 0")


@dataclass
class GateReport:
    """Per-layer reliability scores and gate weights for the patch tokens."""

    layers: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


def default_gate_layers(layer_count: int) -> tuple[int, ...]:
    """Last quarter of the blocks, at least one (e.g. 9..11 of a 12-layer model)."""
    n = max(1, layer_count // 4)
    return tuple(range(layer_count - n, layer_count))


def reliability_scores(x: TokenSequence) -> np.ndarray:
    """l2 norm of every patch token; the class token is excluded."""
    if x.patch_count < 1:
        raise ShapeError("reliability_scores needs at least one patch token")
    p = x.patches().astype(np.float64)
    return np.sqrt((p * p).sum(axis=1)).astype(np.float32)


def gate_weights(s: np.ndarray, config: GateConfig) -> np.ndarray:
    """Map raw scores to weights in (0, 1); monotone and scale invariant.

    Scores are min-max normalized (a constant vector maps to 0.5 everywhere),
    then pushed through ``sigmoid((s_hat - 0.5) / T)``.
    """
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    lo, hi = s.min(), s.max()
    if hi > lo:
        s_hat = (s - lo) / (hi - lo)
    else:
        s_hat = np.full_like(s, 0.5)
    z = (s_hat - 0.5) / config.gate_temperature
    return (1.0 / (1.0 + np.exp(-z))).astype(np.float32)


def apply_gate(x: TokenSequence, w: np.ndarray, alpha: float) -> TokenSequence:
    """Scale patch token i by ``(1 - alpha) + alpha * w_i``; CLS untouched.

    ``alpha == 0`` is a bit-exact identity; the feature direction is always
    preserved because the factor is a nonnegative scalar.
    """
    w = np.asarray(w, dtype=np.float32).reshape(-1)
    if w.shape[0] != x.patch_count:
        raise ShapeError(f"{w.shape[0]} gate weights for {x.patch_count} patches")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    factors = np.float32(1.0 - alpha) + np.float32(alpha) * w
    out = x.tokens.copy()
    out[1:] = out[1:] * factors[:, None]
    return TokenSequence(out, x.grid_h, x.grid_w)


def make_gate_hooks(config: GateConfig, report: GateReport | None = None) -> list[LayerHook]:
    """Layer hooks that gate block outputs at the configured layers."""

    def gate(layer_index: int):
        def transform(x: TokenSequence) -> TokenSequence:
            s = reliability_scores(x)
            w = gate_weights(s, config)
            if report is not None:
                report.layers[layer_index] = (s, w)
            return apply_gate(x, w, config.gate_strength)

        return transform

    return [LayerHook(i, gate(i)) for i in sorted(set(config.layer_indices))]


def og_dense_logits(
    gated_final_tokens: TokenSequence,
    post_gamma: np.ndarray,
    post_beta: np.ndarray,
    w_proj: np.ndarray,
    text_embeddings: np.ndarray,
    ln_eps: float = 1e-5,
) -> np.ndarray:
    """Dense query logits of the gated branch, shaped ``(Q, grid_h, grid_w)``.

    Patch tokens are projected to the joint space, l2-normalized, and dotted
    with the text bank; all values are cosines in [-1, 1].
    """
    projected = project_to_joint_space(
        gated_final_tokens, post_gamma, post_beta, w_proj, ln_eps
    )
    z = l2_normalize_rows(projected[1:])
    y = matmul(z, np.asarray(text_embeddings, dtype=np.float32).T)
    gh, gw = gated_final_tokens.grid_h, gated_final_tokens.grid_w
    return np.ascontiguousarray(y.reshape(gh, gw, -1).transpose(2, 0, 1))
