"""Multi-scale single-shot detector: anchors, heads, targets, loss."""

from .anchors import AnchorSet, BackboneConfig, box_iou, build_anchors, decode_box, encode_box
from .matching import MatchResult, match_anchors
from .model import DetectorConfig, LevelOutputs, ShaftDetector
from .targets import TargetMaps, build_targets, hard_negative_mine
from .loss import LossBreakdown, LossConfig, total_loss

__all__ = [
    "AnchorSet",
    "BackboneConfig",
    "DetectorConfig",
    "LevelOutputs",
    "LossBreakdown",
    "LossConfig",
    "MatchResult",
    "ShaftDetector",
    "TargetMaps",
    "box_iou",
    "build_anchors",
    "build_targets",
    "decode_box",
    "encode_box",
    "hard_negative_mine",
    "match_anchors",
    "total_loss",
]
