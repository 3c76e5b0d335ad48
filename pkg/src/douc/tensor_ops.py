"""Dense float32 numerics shared by every stage of the pipeline.

All operations follow one precision contract: tensors are stored as float32,
while matrix products and reductions (sums, means, variances, norms,
interpolation weights) accumulate in float64 before the result is rounded
back to float32.  Every function is a pure function of its inputs and raises
:class:`~douc.errors.NumericError` if a result would contain NaN or Inf, so
non-finite values never escape this module.

Conventions:

* 2-D arrays are row-major ``(rows, cols)`` matrices.
* 3-D arrays are channel-last ``(height, width, channels)`` grids.
* Bilinear resampling uses the half-pixel (align-corners-false) convention.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError


def as_f32(a, name: str = "array", ndim: int | None = None) -> np.ndarray:
    """Coerce ``a`` to a contiguous float32 array, optionally checking rank."""
    out = np.ascontiguousarray(a, dtype=np.float32)
    if ndim is not None and out.ndim != ndim:
        raise ShapeError(f"{name}: expected {ndim}-d array, got shape {out.shape}")
    return out


def _check_finite(out: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{op}: non-finite values in result")
    return out


def matmul(a, b) -> np.ndarray:
    """Matrix product of two 2-D float32 matrices with float64 accumulation."""
    a = as_f32(a, "matmul lhs", 2)
    b = as_f32(b, "matmul rhs", 2)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)
    return _check_finite(out, "matmul")


def row_softmax(m, scale: float) -> np.ndarray:
    """Row-wise softmax of ``scale * m`` with row-max subtraction.

    Each output row sums to 1 within 1e-6.  ``scale == 0`` yields uniform
    rows regardless of the input; large negative entries (masked affinities)
    underflow cleanly to exact zeros.
    """
    m = as_f32(m, "row_softmax input", 2)
    z = float(scale) * m.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = (e / e.sum(axis=1, keepdims=True)).astype(np.float32)
    return _check_finite(out, "row_softmax")


def l2_normalize_rows(m, eps: float = 1e-12) -> np.ndarray:
    """Divide each row by ``max(row_norm, eps)``; zero rows pass through."""
    if eps <= 0:
        raise ValueError("l2_normalize_rows: eps must be positive")
    m = as_f32(m, "l2_normalize_rows input", 2)
    m64 = m.astype(np.float64)
    norms = np.sqrt((m64 * m64).sum(axis=1, keepdims=True))
    out = (m64 / np.maximum(norms, eps)).astype(np.float32)
    return _check_finite(out, "l2_normalize_rows")


def layer_norm(m, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    """Per-row standardization followed by an affine transform.

    Uses the biased variance (divide by the column count) and clamps it with
    ``eps`` under the square root, so a constant row maps to ``beta``.
    """
    m = as_f32(m, "layer_norm input", 2)
    gamma = as_f32(gamma, "layer_norm gamma", 1)
    beta = as_f32(beta, "layer_norm beta", 1)
    if gamma.shape[0] != m.shape[1] or beta.shape[0] != m.shape[1]:
        raise ShapeError(
            f"layer_norm: gamma/beta lengths {gamma.shape[0]}/{beta.shape[0]} "
            f"do not match {m.shape[1]} columns"
        )
    m64 = m.astype(np.float64)
    mean = m64.mean(axis=1, keepdims=True)
    centered = m64 - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    normed = centered / np.sqrt(var + eps)
    out = (normed * gamma.astype(np.float64) + beta.astype(np.float64)).astype(np.float32)
    return _check_finite(out, "layer_norm")


def _resize_coords(n_in: int, n_out: int):
    """Half-pixel source coordinates and weights for one axis."""
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    w_hi = src - lo
    w_lo = 1.0 - w_hi
    return lo, hi, w_lo, w_hi


def bilinear_resize(g, out_h: int, out_w: int) -> np.ndarray:
    """Channel-wise bilinear resampling with half-pixel centers.

    Identical output size returns a verbatim copy; the interpolation is a
    convex combination of input samples, so each channel's value range is
    preserved.
    """
    g = as_f32(g, "bilinear_resize input", 3)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize: output size {out_h}x{out_w} must be >= 1x1")
    h, w, _ = g.shape
    if (out_h, out_w) == (h, w):
        return g.copy()
    y0, y1, wy0, wy1 = _resize_coords(h, out_h)
    x0, x1, wx0, wx1 = _resize_coords(w, out_w)
    g64 = g.astype(np.float64)
    rows = g64[y0] * wy0[:, None, None] + g64[y1] * wy1[:, None, None]
    out = rows[:, x0] * wx0[None, :, None] + rows[:, x1] * wx1[None, :, None]
    return _check_finite(out.astype(np.float32), "bilinear_resize")


def resize_logit_map(l, out_h: int, out_w: int) -> np.ndarray:
    """Bilinearly resize a ``(Q, h, w)`` logit map to ``(Q, out_h, out_w)``."""
    l = as_f32(l, "logit map", 3)
    grid = np.transpose(l, (1, 2, 0))
    resized = bilinear_resize(grid, out_h, out_w)
    return np.ascontiguousarray(np.transpose(resized, (2, 0, 1)))
