"""Training-target construction and hard negative mining.

Class channel order is (background, instrument). Matched anchors carry
the encoded box and the normalized pose of their ground truth;
unmatched anchors are background with zero box and pose targets. A
record without pose labels produces a pose map flagged absent rather
than zero-filled, which switches the pose loss off for that record.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..geometry import PoseRanges, ShaftPose, normalize_pose
from .anchors import AnchorSet, encode_box
from .matching import MatchResult

CLASS_BACKGROUND = 0
CLASS_INSTRUMENT = 1


@dataclass
class TargetMaps:
    cls_onehot: np.ndarray    # (A, 2)
    box: np.ndarray           # (A, 4)
    pose: np.ndarray          # (A, 5)
    pos_mask: np.ndarray      # (A,)
    pose_labeled: bool


def build_targets(
    anchors: AnchorSet,
    match: MatchResult,
    gt_boxes,
    gt_poses: list[ShaftPose | None],
    ranges: PoseRanges,
) -> TargetMaps:
    n = len(anchors)
    cls_onehot = np.zeros((n, 2), dtype=np.float32)
    cls_onehot[:, CLASS_BACKGROUND] = 1.0
    box = np.zeros((n, 4), dtype=np.float32)
    pose = np.zeros((n, 5), dtype=np.float32)

    labeled_flags = [p is not None for p in gt_poses]
    if any(labeled_flags) and not all(labeled_flags):
        raise ConfigError("record mixes pose-labeled and pose-unlabeled shafts")
    pose_labeled = all(labeled_flags) if gt_poses else True

    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    pos_idx = np.flatnonzero(match.positive_mask)
    for a in pos_idx:
        j = match.anchor_gt[a]
        cls_onehot[a, CLASS_BACKGROUND] = 0.0
        cls_onehot[a, CLASS_INSTRUMENT] = 1.0
        box[a] = encode_box(gt_boxes[j], anchors.centers[a])
        if pose_labeled:
            pose[a] = normalize_pose(gt_poses[j], ranges)
    return TargetMaps(
        cls_onehot=cls_onehot,
        box=box,
        pose=pose,
        pos_mask=match.positive_mask.copy(),
        pose_labeled=pose_labeled,
    )


def hard_negative_mine(conf_losses: np.ndarray, pos_mask: np.ndarray, ratio: int = 3) -> np.ndarray:
    """Mask of the highest-loss negatives at ratio : 1 against positives.

    The positive count is floored at 1 so empty images still mine a few
    negatives; the selection never exceeds the negative pool. Ties keep
    the lower anchor index.
    """
    if ratio < 1:
        raise ConfigError(f"mining ratio must be >= 1, got {ratio}")
    neg_idx = np.flatnonzero(~pos_mask)
    n_keep = min(ratio * max(int(pos_mask.sum()), 1), neg_idx.size)
    selected = np.zeros(pos_mask.shape[0], dtype=bool)
    if n_keep == 0:
        return selected
    order = np.argsort(-conf_losses[neg_idx], kind="stable")
    selected[neg_idx[order[:n_keep]]] = True
    return selected
