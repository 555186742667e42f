"""Candidate selection, non-maximum suppression, and pose decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detector.anchors import AnchorSet, box_iou_matrix, decode_box
from .detector.model import ShaftDetector, preprocess_images
from .detector.targets import CLASS_INSTRUMENT
from .errors import ConfigError
from .geometry import PoseRanges, ShaftPose, denormalize_pose
from .nn.losses import softmax


@dataclass
class Detection:
    bbox: tuple[float, float, float, float]
    score: float
    pose: ShaftPose

    def to_dict(self) -> dict:
        return {"bbox": list(self.bbox), "score": self.score, "pose": self.pose.to_dict()}


def select_topk(scores: np.ndarray, k: int = 250) -> np.ndarray:
    """Indices of the k highest scores; ties keep the lower index."""
    if k < 1:
        raise ConfigError(f"top-k must be >= 1, got {k}")
    order = np.argsort(-scores, kind="stable")
    return order[: min(k, scores.shape[0])]


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float = 0.45) -> np.ndarray:
    """Greedy suppression; returns kept indices in descending score order."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    n = boxes.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    order = np.argsort(-np.asarray(scores), kind="stable")
    iou = box_iou_matrix(boxes, boxes)
    alive = np.ones(n, dtype=bool)
    kept = []
    for i in order:
        if not alive[i]:
            continue
        kept.append(i)
        alive &= iou[i] < iou_threshold
        alive[i] = False
    return np.asarray(kept, dtype=np.int64)


def detect(
    model: ShaftDetector,
    anchors: AnchorSet,
    image: np.ndarray,
    ranges: PoseRanges,
    score_threshold: float = 0.5,
    nms_iou: float = 0.45,
    top_k: int = 250,
) -> list[Detection]:
    """Full single-image inference pipeline.

    Forward in eval mode, softmax instrument probabilities, top-k
    preselection, score gate, box decoding (clipped to the image), NMS,
    and pose decoding at the surviving anchors.
    """
    outputs = model.forward(image[None], train=False)
    cls, box, pose = model.flatten_outputs(outputs)
    probs = softmax(cls[0])[:, CLASS_INSTRUMENT]

    cand = select_topk(probs, top_k)
    cand = cand[probs[cand] >= score_threshold]
    if cand.size == 0:
        return []

    size = float(model.config.backbone.input_size)
    boxes = np.array(
        [decode_box(box[0, a], anchors.centers[a]) for a in cand], dtype=np.float64
    )
    boxes[:, 0::2] = np.clip(boxes[:, 0::2], 0.0, size)
    boxes[:, 1::2] = np.clip(boxes[:, 1::2], 0.0, size)

    keep = nms(boxes, probs[cand], nms_iou)
    return [
        Detection(
            bbox=tuple(float(v) for v in boxes[j]),
            score=float(probs[cand[j]]),
            pose=denormalize_pose(pose[0, cand[j]], ranges),
        )
        for j in keep
    ]
