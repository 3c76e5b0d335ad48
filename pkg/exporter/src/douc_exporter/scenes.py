"""Structured synthetic scenes standing in for real images + frozen VFM dumps.

Each scene is a Voronoi partition of the unit square into regions, each
region carrying a class.  From that single resolution-independent layout we
derive every asset the engine consumes: an RGB image (per-region color plus
noise) that runs through the genuine CLIP embedding stack, a VFM feature
grid (per-region unit direction plus noise, playing the role of frozen DINO
patch features), SAM-style instance masks rasterized both to the feature
grid (>= 50% coverage rule) and to pixel resolution, and the ground-truth
label map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass
class Scene:
    image_id: str
    seeds_yx: np.ndarray  # (R, 2) region seed points in [0, 1]^2
    region_class: np.ndarray  # (R,) class per region
    pixel_values: torch.Tensor  # (1, 3, S, S) model input
    features: np.ndarray  # (fh, fw, fc) external feature grid
    patch_masks: np.ndarray  # (K, fh, fw) binary, >= 50% coverage
    pixel_masks: np.ndarray  # (K, ph, pw) binary
    gt: np.ndarray  # (ph, pw) float32 class ids with 255 ignore border

    def region_at(self, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
        """Nearest-seed region index for normalized coordinates."""
        d2 = (ys[..., None] - self.seeds_yx[:, 0]) ** 2 + (
            xs[..., None] - self.seeds_yx[:, 1]
        ) ** 2
        return np.argmin(d2, axis=-1)

    def region_grid(self, h: int, w: int) -> np.ndarray:
        ys = (np.arange(h) + 0.5) / h
        xs = (np.arange(w) + 0.5) / w
        return self.region_at(ys[:, None] + np.zeros((1, w)), np.zeros((h, 1)) + xs[None, :])

    def coverage(self, h: int, w: int, sub: int = 4) -> np.ndarray:
        """(R, h, w) fraction of each cell inside each region (supersampled)."""
        hs, ws = h * sub, w * sub
        fine = self.region_grid(hs, ws)
        r = len(self.seeds_yx)
        onehot = np.stack([(fine == k) for k in range(r)]).astype(np.float64)
        blocks = onehot.reshape(r, h, sub, w, sub)
        return blocks.mean(axis=(2, 4))

    def class_grid(self, h: int, w: int) -> np.ndarray:
        """Majority class per cell (used for text-prototype pooling)."""
        cov = self.coverage(h, w)
        num_classes = int(self.region_class.max()) + 1
        per_class = np.zeros((num_classes, h, w))
        for r, c in enumerate(self.region_class):
            per_class[c] += cov[r]
        return per_class.argmax(axis=0)


def build_scene(
    image_id: str,
    rng: np.random.Generator,
    *,
    image_size: int,
    patch_size: int,
    feat_grid: tuple[int, int],
    feat_channels: int,
    golden_pixel: tuple[int, int],
    num_classes: int,
    regions: int,
    feature_noise: float = 0.15,
    color_noise: float = 0.1,
    corrupt_fraction: float = 0.25,
    ignore_border: int = 2,
    mask_keep: str = "alternate",
) -> Scene:
    seeds = rng.uniform(0.05, 0.95, size=(regions, 2))
    region_class = np.array([r % num_classes for r in range(regions)])

    scene = Scene(
        image_id=image_id,
        seeds_yx=seeds,
        region_class=region_class,
        pixel_values=torch.zeros(1),
        features=np.zeros(1),
        patch_masks=np.zeros(1),
        pixel_masks=np.zeros(1),
        gt=np.zeros(1),
    )

    # RGB image through which the real embedding stack runs.  Class colors
    # come from a well-separated palette (same class, same look across
    # regions); noise is drawn per patch block (texture scale), not per
    # pixel: per-pixel noise would average out inside the conv patch
    # embedding and never perturb tokens.
    s = image_size
    reg_img = scene.region_grid(s, s)
    palette = np.array(
        [[0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.1, 0.1, 0.9], [0.9, 0.9, 0.1],
         [0.9, 0.1, 0.9], [0.1, 0.9, 0.9], [0.5, 0.5, 0.5], [0.9, 0.5, 0.1]]
    )
    colors = palette[region_class % len(palette)] + rng.uniform(-0.05, 0.05, (regions, 3))
    rgb = colors[reg_img]
    blocks = s // patch_size
    if color_noise > 0:
        block_noise = rng.normal(0, color_noise, size=(blocks, blocks, 3))
        rgb = rgb + np.repeat(np.repeat(block_noise, patch_size, 0), patch_size, 1)
    if corrupt_fraction > 0:
        # sparse outlier patches: whole blocks painted an arbitrary color,
        # the unreliable tokens the gating/proxy machinery is aimed at
        corrupt = rng.random((blocks, blocks)) < corrupt_fraction
        random_colors = rng.uniform(0.0, 1.0, size=(blocks, blocks, 3))
        corrupt_img = np.repeat(np.repeat(corrupt, patch_size, 0), patch_size, 1)
        colors_img = np.repeat(np.repeat(random_colors, patch_size, 0), patch_size, 1)
        rgb = np.where(corrupt_img[..., None], colors_img, rgb)
    rgb = np.clip(rgb, 0.0, 1.0).astype(np.float32)
    scene.pixel_values = torch.from_numpy(rgb).permute(2, 0, 1)[None]

    # external feature grid: per-region unit direction + noise
    fh, fw = feat_grid
    direction = rng.standard_normal((regions, feat_channels))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    reg_feat = scene.region_grid(fh, fw)
    feats = direction[reg_feat] + rng.normal(0, feature_noise, (fh, fw, feat_channels))
    scene.features = feats.astype(np.float32)

    # SAM-style instance masks; real mask generators never cover everything,
    # so by default only alternating regions get a mask
    ph, pw = golden_pixel
    cov_feat = scene.coverage(fh, fw)
    cov_pix = scene.coverage(ph, pw, sub=2)
    areas = cov_pix.reshape(regions, -1).sum(axis=1)
    background = int(np.argmax(areas))
    kept = [r for r in range(regions) if r != background]
    if mask_keep == "alternate":
        kept = kept[::2]
    elif mask_keep != "all-but-background":
        raise ValueError(f"unknown mask_keep '{mask_keep}'")
    scene.patch_masks = (cov_feat[kept] >= 0.5).astype(np.float32)
    scene.pixel_masks = (cov_pix[kept] >= 0.5).astype(np.float32)

    # ground truth with an ignored border
    reg_pix = scene.region_grid(ph, pw)
    gt = region_class[reg_pix].astype(np.float32)
    if ignore_border > 0:
        gt[:ignore_border] = 255.0
        gt[-ignore_border:] = 255.0
        gt[:, :ignore_border] = 255.0
        gt[:, -ignore_border:] = 255.0
    scene.gt = gt
    return scene
