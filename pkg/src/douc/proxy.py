"""Proxy-attention branch guided by external vision-foundation-model features.

The final encoder block's attention aggregation is replaced by a softmax over
pairwise cosine similarities of external patch features, optionally gated so
attention flows only within instance-mask regions.  The block's value matrix
is bilinearly resampled to the external feature grid before reconstruction,
and the block's output projection, residual and FFN still run afterwards.

Masked affinity entries are set to a large negative sentinel (-1e4) before
the softmax; at temperatures >= 1 the corresponding attention mass underflows
to exact zero, so cross-instance leakage is not merely small but absent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import PipelineError, ShapeError
from .tensor_ops import as_f32, l2_normalize_rows, matmul, row_softmax
from .vit import TokenSequence, forward, project_to_joint_space

MASK_SENTINEL = -1e4

UNCOVERED_BACKGROUND = "background-group"
UNCOVERED_SELF_ONLY = "self-only"


@dataclass(frozen=True)
class ProxyConfig:
    """Temperature and masking behavior of the proxy attention."""

    tau: float = 2.0
    mask_mode: str = "instance"  # "off" | "instance"
    uncovered_policy: str = UNCOVERED_BACKGROUND
    use_vfm: bool = True  # False = uniform-affinity fallback (ablation)

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau {self.tau} must be > 0")
        if self.mask_mode not in ("off", "instance"):
            raise ValueError(f"unknown mask_mode '{self.mask_mode}'")
        if self.uncovered_policy not in (UNCOVERED_BACKGROUND, UNCOVERED_SELF_ONLY):
            raise ValueError(f"unknown uncovered_policy '{self.uncovered_policy}'")


class InstanceMaskSet:
    """Binary instance masks on the feature grid (and optionally at pixel res).

    Overlaps are resolved at load time: a cell claimed by several masks is
    assigned to the smallest-area mask (ties to the lowest index), so the
    stored label grids are disjoint.  Uncovered cells get label -1.
    """

    def __init__(self, patch_masks, pixel_masks=None, ids=None):
        self.patch_masks = self._binarize(patch_masks, "patch_masks")
        self.pixel_masks = (
            self._binarize(pixel_masks, "pixel_masks") if pixel_masks is not None else None
        )
        count = 0 if self.patch_masks is None else self.patch_masks.shape[0]
        if self.pixel_masks is not None and self.patch_masks is not None:
            if self.pixel_masks.shape[0] != count:
                raise ShapeError(
                    f"{self.pixel_masks.shape[0]} pixel masks for {count} patch masks"
                )
        self.ids = list(ids) if ids is not None else list(range(count))
        self._patch_labels = (
            None if self.patch_masks is None else self._resolve(self.patch_masks)
        )
        self._pixel_labels = (
            None if self.pixel_masks is None else self._resolve(self.pixel_masks)
        )

    @staticmethod
    def _binarize(masks, name) -> Optional[np.ndarray]:
        if masks is None:
            return None
        arr = np.asarray(masks)
        if arr.ndim != 3:
            raise ShapeError(f"{name} must be (count, h, w), got shape {arr.shape}")
        return arr > 0.5

    @staticmethod
    def _resolve(masks: np.ndarray) -> np.ndarray:
        """Assign each cell to the smallest-area covering mask; -1 = uncovered."""
        k, h, w = masks.shape
        labels = np.full((h, w), -1, dtype=np.int64)
        areas = masks.reshape(k, -1).sum(axis=1)
        for idx in sorted(range(k), key=lambda i: (areas[i], i)):
            claim = masks[idx] & (labels < 0)
            labels[claim] = idx
        return labels

    @property
    def count(self) -> int:
        return 0 if self.patch_masks is None else self.patch_masks.shape[0]

    def patch_labels(self) -> np.ndarray:
        """Flat per-patch instance labels (length H_f*W_f), -1 = uncovered."""
        if self._patch_labels is None:
            raise ShapeError("mask set has no patch-grid masks")
        return self._patch_labels.reshape(-1)

    def pixel_labels(self) -> np.ndarray:
        """Per-pixel instance labels (H, W), -1 = uncovered."""
        if self._pixel_labels is None:
            raise ShapeError("mask set has no pixel-resolution masks")
        return self._pixel_labels

    @staticmethod
    def empty() -> "InstanceMaskSet":
        return InstanceMaskSet(np.zeros((0, 1, 1), dtype=np.float32))


def build_affinity(features) -> np.ndarray:
    """Pairwise cosine similarities of the flattened feature grid.

    Returns a symmetric ``(n, n)`` matrix, ``n = H_f * W_f``; zero feature
    rows produce zero similarities via eps-guarded normalization.
    """
    g = as_f32(features, "feature grid", 3)
    n = g.shape[0] * g.shape[1]
    flat = l2_normalize_rows(g.reshape(n, g.shape[2]))
    return matmul(flat, flat.T)


def _group_labels(n: int, masks: Optional[InstanceMaskSet], policy: str) -> np.ndarray:
    labels = masks.patch_labels() if masks is not None and masks.count else np.full(
        n, -1, dtype=np.int64
    )
    if labels.shape[0] != n:
        raise ShapeError(f"mask grid has {labels.shape[0]} patches, affinity has {n}")
    if policy == UNCOVERED_SELF_ONLY:
        labels = labels.copy()
        uncovered = labels < 0
        # unique negative group per uncovered patch -> only the diagonal survives
        labels[uncovered] = -(np.flatnonzero(uncovered) + 2)
    return labels


def mask_affinity(
    s, masks: InstanceMaskSet, policy: str = UNCOVERED_BACKGROUND
) -> np.ndarray:
    """Sentinel out entries whose endpoints lie in different instances.

    Same-instance pairs are untouched.  Uncovered patches either form one
    shared background group (default) or may attend only to themselves.
    """
    s = as_f32(s, "affinity", 2)
    n = s.shape[0]
    if s.shape[1] != n:
        raise ShapeError(f"affinity must be square, got {s.shape}")
    groups = _group_labels(n, masks, policy)
    allowed = groups[:, None] == groups[None, :]
    return np.where(allowed, s, np.float32(MASK_SENTINEL))


def normalize_affinity(s, tau: float) -> np.ndarray:
    """Temperature-scaled row softmax; every row sums to 1."""
    if tau <= 0:
        raise ValueError(f"tau {tau} must be > 0")
    return row_softmax(s, tau)


def uniform_affinity(n: int) -> np.ndarray:
    """The no-VFM fallback: every patch attends uniformly to all patches."""
    return np.full((n, n), 1.0 / n, dtype=np.float32)


def resample_values(
    v: np.ndarray, clip_grid: tuple[int, int], target: tuple[int, int]
) -> np.ndarray:
    """Resample the patch rows of a value matrix to the external feature grid.

    The CLS row (index 0) is dropped; the result has ``target[0] * target[1]``
    rows.  Identical grids return the patch rows unchanged.
    """
    v = as_f32(v, "values", 2)
    gh, gw = clip_grid
    if v.shape[0] != gh * gw + 1:
        raise ShapeError(f"{v.shape[0]} value rows do not match grid {gh}x{gw} plus CLS")
    from .vit import resample_token_rows

    return resample_token_rows(v, clip_grid, target)[1:]


def reconstruct_values(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``A_proxy @ V``: each output row is a convex combination of value rows."""
    return matmul(a, v)


def build_proxy_affinity(
    features, masks: Optional[InstanceMaskSet], config: ProxyConfig
) -> np.ndarray:
    """Full affinity pipeline: cosine -> optional instance mask -> softmax."""
    g = as_f32(features, "feature grid", 3)
    n = g.shape[0] * g.shape[1]
    if not config.use_vfm:
        return uniform_affinity(n)
    s = build_affinity(g)
    if config.mask_mode == "instance" and masks is not None and masks.count > 0:
        s = mask_affinity(s, masks, config.uncovered_policy)
    return normalize_affinity(s, config.tau)


def fade_dense_logits(
    x0: TokenSequence,
    blocks,
    post_gamma,
    post_beta,
    w_proj,
    features,
    masks: Optional[InstanceMaskSet],
    text_embeddings,
    config: ProxyConfig,
    ln_eps: float = 1e-5,
):
    """Dense logits of the proxy branch, shaped ``(Q, H_f, W_f)``.

    Runs the encoder with the final block's aggregation replaced by the proxy
    attention; the reconstructed patch values keep the original CLS value row
    at index 0 and pass through the block's remaining structure and the
    post-processing head.  Also returns the intermediates needed for golden
    verification: the proxy affinity and the captured value matrix.
    """
    g = as_f32(features, "feature grid", 3)
    feat_h, feat_w = g.shape[0], g.shape[1]

    try:
        affinity = build_proxy_affinity(g, masks, config)
    except Exception as exc:
        raise PipelineError("proxy-affinity", str(exc)) from exc

    def aggregator(values: np.ndarray, block_input: TokenSequence):
        v_res = resample_values(
            values, (block_input.grid_h, block_input.grid_w), (feat_h, feat_w)
        )
        v_proxy = reconstruct_values(affinity, v_res)
        return np.concatenate([values[:1], v_proxy], axis=0), (feat_h, feat_w)

    try:
        tokens_out, captured_v = forward(
            x0, blocks, last_block_mode="replaced", aggregator=aggregator, ln_eps=ln_eps
        )
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError("proxy-forward", str(exc)) from exc

    try:
        projected = project_to_joint_space(tokens_out, post_gamma, post_beta, w_proj, ln_eps)
        z = l2_normalize_rows(projected[1:])
        y = matmul(z, np.asarray(text_embeddings, dtype=np.float32).T)
    except Exception as exc:
        raise PipelineError("proxy-projection", str(exc)) from exc

    logits = np.ascontiguousarray(y.reshape(feat_h, feat_w, -1).transpose(2, 0, 1))
    return logits, {"proxy_affinity": affinity, "last_v": captured_v}
