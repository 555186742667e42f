"""Anchor (default box) grids and box encoding.

Boxes are axis-aligned, half-open pixel rectangles (x_min, y_min,
x_max, y_max). Anchors are stored center-size. Per pyramid level k of m
the base scale is s_k = 0.2 + (0.9 - 0.2)(k - 1)/(m - 1); each grid
cell gets boxes at aspect ratios 1, 2 and 1/2 plus one extra ratio-1
box at scale sqrt(s_k * s_{k+1}), with s_{m+1} = 1.0. Anchor widths and
heights are clipped to the image size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError

BOXES_PER_CELL = 4


@dataclass
class BackboneConfig:
    """Input size and the feature-pyramid layout of the backbone."""

    input_size: int = 64
    level_sizes: tuple[int, ...] = (16, 8, 4, 2)
    channels: int = 32

    def __post_init__(self) -> None:
        self.level_sizes = tuple(int(s) for s in self.level_sizes)
        sizes = self.level_sizes
        if not sizes:
            raise ConfigError("at least one pyramid level is required")
        if any(a <= b for a, b in zip(sizes, sizes[1:])):
            raise ConfigError(f"level sizes must be strictly decreasing, got {sizes}")
        if sizes[-1] < 2:
            raise ConfigError("last pyramid level must be at least 2x2")
        for a, b in zip(sizes, sizes[1:]):
            if (a + 1) // 2 != b:
                raise ConfigError(
                    f"each level must halve the previous (ceil), got {a} -> {b}"
                )
        size = self.input_size
        while size > sizes[0]:
            size = (size + 1) // 2
        if size != sizes[0]:
            raise ConfigError(
                f"input size {self.input_size} cannot reach first level {sizes[0]} by halving"
            )
        if self.channels < 1:
            raise ConfigError("channels must be positive")


@dataclass
class AnchorSet:
    """Flattened multi-scale anchor grid with per-level layout.

    ``centers`` is (A, 4) center-size (cx, cy, w, h); ``corners`` the
    same boxes as half-open corners. The global anchor index runs level
    by level, row-major over grid cells, boxes-per-cell innermost.
    """

    image_size: int
    level_sizes: tuple[int, ...]
    boxes_per_cell: int
    centers: np.ndarray
    corners: np.ndarray
    level_offsets: tuple[int, ...] = field(default=())

    def __len__(self) -> int:
        return self.centers.shape[0]

    def index_of(self, level: int, y: int, x: int, k: int) -> int:
        g = self.level_sizes[level]
        return self.level_offsets[level] + (y * g + x) * self.boxes_per_cell + k

    def location_of(self, index: int) -> tuple[int, int, int, int]:
        for level, off in enumerate(self.level_offsets):
            g = self.level_sizes[level]
            count = g * g * self.boxes_per_cell
            if index < off + count:
                rel = index - off
                cell, k = divmod(rel, self.boxes_per_cell)
                y, x = divmod(cell, g)
                return level, y, x, k
        raise IndexError(f"anchor index {index} out of range")


def _level_scales(num_levels: int) -> list[float]:
    if num_levels == 1:
        return [0.2]
    return [0.2 + 0.7 * k / (num_levels - 1) for k in range(num_levels)]


def build_anchors(config: BackboneConfig) -> AnchorSet:
    """Construct the anchor grid for a backbone configuration."""
    img = float(config.input_size)
    scales = _level_scales(len(config.level_sizes))
    next_scales = scales[1:] + [1.0]

    all_boxes = []
    offsets = []
    total = 0
    for g, s, s_next in zip(config.level_sizes, scales, next_scales):
        offsets.append(total)
        dims = []
        for ratio in (1.0, 2.0, 0.5):
            dims.append((s * np.sqrt(ratio), s / np.sqrt(ratio)))
        extra = np.sqrt(s * s_next)
        dims.append((extra, extra))
        dims = np.minimum(np.array(dims) * img, img)  # (4, 2) w,h in px

        step = img / g
        cs = (np.arange(g) + 0.5) * step
        cx, cy = np.meshgrid(cs, cs)
        cx = np.repeat(cx.reshape(-1, 1), BOXES_PER_CELL, axis=0).reshape(-1)
        cy = np.repeat(cy.reshape(-1, 1), BOXES_PER_CELL, axis=0).reshape(-1)
        wh = np.tile(dims, (g * g, 1))
        all_boxes.append(np.stack([cx, cy, wh[:, 0], wh[:, 1]], axis=1))
        total += g * g * BOXES_PER_CELL

    centers = np.concatenate(all_boxes, axis=0)
    corners = np.empty_like(centers)
    corners[:, 0] = centers[:, 0] - centers[:, 2] / 2
    corners[:, 1] = centers[:, 1] - centers[:, 3] / 2
    corners[:, 2] = centers[:, 0] + centers[:, 2] / 2
    corners[:, 3] = centers[:, 1] + centers[:, 3] / 2
    return AnchorSet(
        image_size=config.input_size,
        level_sizes=config.level_sizes,
        boxes_per_cell=BOXES_PER_CELL,
        centers=centers,
        corners=corners,
        level_offsets=tuple(offsets),
    )


def encode_box(gt_box, anchor_cs) -> np.ndarray:
    """SSD center-size offsets of a ground-truth corner box vs an anchor.

    Offsets are ((cx_g - cx_a)/w_a, (cy_g - cy_a)/h_a, ln(w_g/w_a),
    ln(h_g/h_a)); no variance scaling is applied.
    """
    x0, y0, x1, y1 = (float(v) for v in gt_box)
    w_g, h_g = x1 - x0, y1 - y0
    if w_g <= 0 or h_g <= 0:
        raise ConfigError(f"degenerate ground-truth box {gt_box}")
    cx_a, cy_a, w_a, h_a = (float(v) for v in anchor_cs)
    return np.array(
        [
            ((x0 + x1) / 2 - cx_a) / w_a,
            ((y0 + y1) / 2 - cy_a) / h_a,
            np.log(w_g / w_a),
            np.log(h_g / h_a),
        ]
    )


def decode_box(offsets, anchor_cs) -> tuple[float, float, float, float]:
    """Inverse of :func:`encode_box`, returning a corner box."""
    tx, ty, tw, th = (float(v) for v in offsets)
    cx_a, cy_a, w_a, h_a = (float(v) for v in anchor_cs)
    cx = tx * w_a + cx_a
    cy = ty * h_a + cy_a
    w = np.exp(tw) * w_a
    h = np.exp(th) * h_a
    return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def box_iou(a, b) -> float:
    """IoU of two half-open corner boxes; 0 if either is degenerate."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    area_a = max(0.0, ax1 - ax0) * max(0.0, ay1 - ay0)
    area_b = max(0.0, bx1 - bx0) * max(0.0, by1 - by0)
    if area_a <= 0.0 or area_b <= 0.0:
        return 0.0
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def box_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) corner boxes."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = np.clip(a[:, 2] - a[:, 0], 0, None) * np.clip(a[:, 3] - a[:, 1], 0, None)
    area_b = np.clip(b[:, 2] - b[:, 0], 0, None) * np.clip(b[:, 3] - b[:, 1], 0, None)
    iw = np.clip(
        np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]),
        0,
        None,
    )
    ih = np.clip(
        np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]),
        0,
        None,
    )
    inter = iw * ih
    union = area_a[:, None] + area_b[None, :] - inter
    iou = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    iou[area_a <= 0, :] = 0.0
    iou[:, area_b <= 0] = 0.0
    return iou
