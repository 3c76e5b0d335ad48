"""Logit-level fusion of the two branches and final label prediction.

Branch logit maps (at possibly different grids) are bilinearly aligned to the
larger grid and combined linearly; a per-query constant derived from the
global class-token embedding may be broadcast-added on top.  Query logits are
collapsed to class logits via the query->class map, upsampled to pixel
resolution, optionally corrected to be constant inside each instance mask,
and finally converted to a label map by softmax + argmax (ties break to the
lowest class index).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, ShapeError
from .proxy import InstanceMaskSet
from .tensor_ops import as_f32, matmul, resize_logit_map, row_softmax

COLLAPSE_MODES = ("max", "mean")

FUSION_PRESETS = {
    "balanced": (0.5, 0.5),
    "og-only": (1.0, 0.0),
    "fade-only": (0.0, 1.0),
    "og-to-fade": (0.75, 0.25),  # 75% source (OG), 25% target
    "fade-to-og": (0.25, 0.75),
}


@dataclass(frozen=True)
class FusionConfig:
    alpha_og: float = 0.5
    alpha_fade: float = 0.5
    lambda_cls: float = 0.0
    collapse: str = "max"
    post_correct: bool = True

    def __post_init__(self):
        if self.alpha_og < 0 or self.alpha_fade < 0:
            raise ValueError("fusion weights must be nonnegative")
        if self.alpha_og == 0 and self.alpha_fade == 0:
            raise ValueError("fusion weights cannot both be zero")
        if self.lambda_cls < 0:
            raise ValueError("lambda_cls must be nonnegative")
        if self.collapse not in COLLAPSE_MODES:
            raise ValueError(f"collapse must be one of {COLLAPSE_MODES}")


@dataclass
class TextBank:
    """Unit-norm text embeddings plus the query->class mapping."""

    embeddings: np.ndarray  # (Q, d), rows unit norm
    query_to_class: np.ndarray  # (Q,) int, values in [0, C)
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.embeddings = as_f32(self.embeddings, "text embeddings", 2)
        self.query_to_class = np.asarray(self.query_to_class, dtype=np.int64).reshape(-1)
        if self.query_to_class.shape[0] != self.embeddings.shape[0]:
            raise ShapeError(
                f"{self.query_to_class.shape[0]} query->class entries for "
                f"{self.embeddings.shape[0]} queries"
            )
        norms = np.linalg.norm(self.embeddings.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-5):
            raise ShapeError("text embeddings must be unit-norm rows")
        c = self.num_classes
        if self.query_to_class.min(initial=0) < 0 or self.query_to_class.max(initial=-1) >= c:
            raise ShapeError("query_to_class has out-of-range class indices")
        present = np.unique(self.query_to_class)
        if present.shape[0] != c:
            raise ShapeError("every class needs at least one query")
        if self.class_names and len(self.class_names) != c:
            raise ShapeError(f"{len(self.class_names)} class names for {c} classes")

    @property
    def num_queries(self) -> int:
        return self.embeddings.shape[0]

    @property
    def num_classes(self) -> int:
        if self.class_names:
            return len(self.class_names)
        return int(self.query_to_class.max()) + 1


def align_and_fuse(l_og: np.ndarray, l_fade: np.ndarray, config: FusionConfig) -> np.ndarray:
    """Resize both query-logit maps to the larger grid, then combine linearly.

    A zero weight reproduces the surviving branch exactly (no arithmetic on
    the dropped branch).
    """
    l_og = as_f32(l_og, "og logits", 3)
    l_fade = as_f32(l_fade, "fade logits", 3)
    if l_og.shape[0] != l_fade.shape[0]:
        raise ShapeError(
            f"query counts differ: og has {l_og.shape[0]}, fade has {l_fade.shape[0]}"
        )
    out_h = max(l_og.shape[1], l_fade.shape[1])
    out_w = max(l_og.shape[2], l_fade.shape[2])
    og_r = resize_logit_map(l_og, out_h, out_w)
    fade_r = resize_logit_map(l_fade, out_h, out_w)
    a_og = np.float32(config.alpha_og)
    a_fade = np.float32(config.alpha_fade)
    if config.alpha_fade == 0:
        return og_r if config.alpha_og == 1 else a_og * og_r
    if config.alpha_og == 0:
        return fade_r if config.alpha_fade == 1 else a_fade * fade_r
    return a_fade * fade_r + a_og * og_r


def cls_prior_logits(cls_projected: np.ndarray, text: TextBank) -> np.ndarray:
    """Cosine of the global class-token embedding with every query embedding."""
    c = np.asarray(cls_projected, dtype=np.float64).reshape(-1)
    if c.shape[0] != text.embeddings.shape[1]:
        raise ShapeError(
            f"CLS embedding dim {c.shape[0]} != text dim {text.embeddings.shape[1]}"
        )
    norm = np.sqrt((c * c).sum())
    if norm < 1e-12:
        raise DegenerateInputError("CLS embedding has (near-)zero norm")
    unit = (c / norm).astype(np.float32)
    return matmul(text.embeddings, unit[:, None])[:, 0]


def add_cls_prior(l: np.ndarray, l_cls: np.ndarray, lambda_cls: float) -> np.ndarray:
    """Broadcast-add a per-query constant over all spatial positions."""
    l = as_f32(l, "logits", 3)
    l_cls = np.asarray(l_cls, dtype=np.float32).reshape(-1)
    if l_cls.shape[0] != l.shape[0]:
        raise ShapeError(f"{l_cls.shape[0]} prior entries for {l.shape[0]} queries")
    if lambda_cls == 0:
        return l.copy()
    return l + np.float32(lambda_cls) * l_cls[:, None, None]


def collapse_queries(
    l: np.ndarray, query_to_class: np.ndarray, num_classes: int, mode: str = "max"
) -> np.ndarray:
    """Collapse synonymous query logits to class logits at each position."""
    l = as_f32(l, "query logits", 3)
    pi = np.asarray(query_to_class, dtype=np.int64).reshape(-1)
    if pi.shape[0] != l.shape[0]:
        raise ShapeError(f"{pi.shape[0]} mapping entries for {l.shape[0]} queries")
    if mode not in COLLAPSE_MODES:
        raise ValueError(f"collapse must be one of {COLLAPSE_MODES}")
    if num_classes == l.shape[0] and np.array_equal(pi, np.arange(num_classes)):
        return l.copy()
    out = np.empty((num_classes, l.shape[1], l.shape[2]), dtype=np.float32)
    for c in range(num_classes):
        members = l[pi == c]
        if members.shape[0] == 0:
            raise ShapeError(f"class {c} has no queries")
        if mode == "max":
            out[c] = members.max(axis=0)
        else:
            out[c] = members.astype(np.float64).mean(axis=0).astype(np.float32)
    return out


def upsample_logits(l: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Bilinearly upsample a class-logit map to pixel resolution."""
    return resize_logit_map(l, target_h, target_w)


def predict(l_class: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Upsample, softmax over classes per pixel, argmax (lowest index wins)."""
    up = upsample_logits(as_f32(l_class, "class logits", 3), target_h, target_w)
    c, h, w = up.shape
    probs = row_softmax(up.reshape(c, h * w).T, 1.0)
    return probs.argmax(axis=1).astype(np.int64).reshape(h, w)


def instance_post_correct(l_class: np.ndarray, masks: InstanceMaskSet) -> np.ndarray:
    """Replace each instance region's logit vectors by their regional mean.

    Operates on class logits at pixel resolution; uncovered pixels are
    unchanged, so each region's argmax becomes constant within the region.
    """
    l = as_f32(l_class, "class logits", 3)
    labels = masks.pixel_labels()
    if labels.shape != l.shape[1:]:
        raise ShapeError(
            f"pixel masks {labels.shape} do not match logit map {l.shape[1:]}"
        )
    out = l.copy()
    flat = out.reshape(out.shape[0], -1)
    lab = labels.reshape(-1)
    for inst in np.unique(lab):
        if inst < 0:
            continue
        idx = np.flatnonzero(lab == inst)
        mean = flat[:, idx].astype(np.float64).mean(axis=1).astype(np.float32)
        flat[:, idx] = mean[:, None]
    return out
