"""Anchor-to-ground-truth assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anchors import AnchorSet, box_iou_matrix


@dataclass
class MatchResult:
    """Per-anchor assignment: ground-truth index or -1 for background."""

    anchor_gt: np.ndarray   # (A,) int
    ious: np.ndarray        # (A,) IoU with the assigned gt (0 where unmatched)

    @property
    def positive_mask(self) -> np.ndarray:
        return self.anchor_gt >= 0


def match_anchors(anchors: AnchorSet, gt_boxes, threshold: float = 0.5) -> MatchResult:
    """SSD-style two-stage matching.

    Every ground truth first claims its single highest-IoU anchor (even
    below threshold, so no gt is left without a positive); remaining
    anchors match their best gt when IoU >= threshold. Ties break
    toward the lower gt index, and a forced claim on an already-claimed
    anchor only wins with strictly higher IoU.
    """
    n_anchors = len(anchors)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    anchor_gt = np.full(n_anchors, -1, dtype=np.int64)
    ious_out = np.zeros(n_anchors)
    if gt.shape[0] == 0:
        return MatchResult(anchor_gt=anchor_gt, ious=ious_out)

    iou = box_iou_matrix(anchors.corners, gt)  # (A, G)

    forced = {}
    for j in range(gt.shape[0]):
        a_best = int(np.argmax(iou[:, j]))
        if a_best not in forced or iou[a_best, j] > forced[a_best][1]:
            forced[a_best] = (j, iou[a_best, j])

    best_gt = np.argmax(iou, axis=1)
    best_iou = iou[np.arange(n_anchors), best_gt]
    above = best_iou >= threshold
    anchor_gt[above] = best_gt[above]
    ious_out[above] = best_iou[above]

    for a_idx, (j, v) in forced.items():
        anchor_gt[a_idx] = j
        ious_out[a_idx] = v
    return MatchResult(anchor_gt=anchor_gt, ious=ious_out)
