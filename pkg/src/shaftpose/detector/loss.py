"""Composite detection loss: L = (L_conf + alpha * L_bbox + L_pose) / n.

L_conf is softmax cross-entropy over positives plus hard-mined
negatives; L_bbox is smooth L1 over positives; L_pose sums
beta_p * smoothL1(gamma * (pred_p - target_p)) over positives of
pose-labeled batch items. n is the matched-anchor count over the whole
batch, floored at 1. Pose-unlabeled items contribute exactly zero pose
loss and zero pose gradient. The loss is computed on flat per-anchor
rows and returns analytic gradients with respect to the three output
maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, NumericError
from ..nn.losses import smooth_l1, smooth_l1_grad, softmax_cross_entropy
from .targets import TargetMaps, hard_negative_mine


@dataclass
class LossConfig:
    alpha: float = 1.5
    gamma: float = 5.0
    beta: tuple[float, ...] = (1.0, 1.0, 2.0, 2.0, 2.0)
    hard_negative_ratio: int = 3
    pose_loss_on_negatives: bool = False

    def __post_init__(self) -> None:
        self.beta = tuple(float(b) for b in self.beta)
        if len(self.beta) != 5:
            raise ConfigError("beta must have 5 entries (x, y, z, pitch, yaw)")


@dataclass
class LossBreakdown:
    """Unnormalized loss terms plus the matched-anchor normalizer."""

    l_conf: float
    l_bbox: float
    l_pose: float
    n_matched: int
    total: float

    def to_dict(self) -> dict:
        return {
            "l_conf": self.l_conf,
            "l_bbox": self.l_bbox,
            "l_pose": self.l_pose,
            "n_matched": self.n_matched,
            "total": self.total,
        }


@dataclass
class BatchTargets:
    """Stacked per-anchor target maps for one batch."""

    cls_onehot: np.ndarray   # (B, A, 2)
    box: np.ndarray          # (B, A, 4)
    pose: np.ndarray         # (B, A, 5)
    pos_mask: np.ndarray     # (B, A)
    pose_labeled: np.ndarray  # (B,)

    @classmethod
    def stack(cls, targets: list[TargetMaps]) -> "BatchTargets":
        return cls(
            cls_onehot=np.stack([t.cls_onehot for t in targets]),
            box=np.stack([t.box for t in targets]),
            pose=np.stack([t.pose for t in targets]),
            pos_mask=np.stack([t.pos_mask for t in targets]),
            pose_labeled=np.array([t.pose_labeled for t in targets]),
        )


def total_loss(
    cls_logits: np.ndarray,
    box_pred: np.ndarray,
    pose_pred: np.ndarray,
    targets: list[TargetMaps] | BatchTargets,
    cfg: LossConfig,
):
    """Loss breakdown and gradients w.r.t. the flat output maps."""
    b, a, _ = cls_logits.shape
    if not isinstance(targets, BatchTargets):
        targets = BatchTargets.stack(targets)
    if targets.pos_mask.shape[0] != b:
        raise ConfigError(f"batch of {b} outputs vs {targets.pos_mask.shape[0]} targets")
    dtype = cls_logits.dtype

    cls_t = targets.cls_onehot.astype(dtype, copy=False)
    box_t = targets.box.astype(dtype, copy=False)
    pose_t = targets.pose.astype(dtype, copy=False)
    pos = targets.pos_mask
    labeled = targets.pose_labeled

    ce, probs = softmax_cross_entropy(cls_logits.reshape(-1, 2), cls_t.reshape(-1, 2))
    ce = ce.reshape(b, a)
    probs = probs.reshape(b, a, 2)

    selected = pos.copy()
    for i in range(b):
        selected[i] |= hard_negative_mine(ce[i], pos[i], cfg.hard_negative_ratio)
    l_conf = float(ce[selected].sum())

    box_diff = box_pred - box_t
    box_elem = smooth_l1(box_diff)
    l_bbox = float(box_elem[pos].sum())

    beta = np.asarray(cfg.beta, dtype=dtype)
    pose_mask = pos & labeled[:, None]
    if cfg.pose_loss_on_negatives:
        pose_mask = np.broadcast_to(labeled[:, None], pos.shape).copy()
    pose_res = cfg.gamma * (pose_pred - pose_t)
    l_pose = float((beta * smooth_l1(pose_res))[pose_mask].sum())

    n = max(int(pos.sum()), 1)
    total = (l_conf + cfg.alpha * l_bbox + l_pose) / n
    if not np.isfinite(total):
        raise NumericError(
            f"non-finite loss (conf={l_conf}, bbox={l_bbox}, pose={l_pose}, n={n})"
        )

    d_cls = (probs - cls_t) * selected[:, :, None].astype(dtype) / n
    d_box = (cfg.alpha / n) * smooth_l1_grad(box_diff) * pos[:, :, None].astype(dtype)
    d_pose = (
        (cfg.gamma / n)
        * beta
        * smooth_l1_grad(pose_res)
        * pose_mask[:, :, None].astype(dtype)
    )
    breakdown = LossBreakdown(
        l_conf=l_conf, l_bbox=l_bbox, l_pose=l_pose, n_matched=int(pos.sum()), total=total
    )
    return breakdown, (d_cls, d_box, d_pose)
