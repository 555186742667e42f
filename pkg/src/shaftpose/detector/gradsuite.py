"""End-to-end gradient checks through the full detector loss.

A tiny double-precision detector (16x16 input, two levels) is driven
through forward, composite loss, and backward; analytic parameter
gradients are compared against central differences on a sampled subset
of components from every parameter tensor, plus the input image.
"""

from __future__ import annotations

import numpy as np

from ..geometry import PoseRanges, ShaftPose
from ..nn.gradcheck import END_TO_END_TOLERANCE, OpCheckResult, grad_check, run_nn_op_suite
from .anchors import BackboneConfig, build_anchors
from .loss import LossConfig, total_loss
from .matching import match_anchors
from .model import DetectorConfig, ShaftDetector
from .targets import build_targets


def check_end_to_end_loss(variant: str, seed: int = 0, sample_per_tensor: int = 8) -> float:
    """Worst relative gradient error of the 1-sample composite loss."""
    rng = np.random.default_rng(seed)
    backbone = BackboneConfig(input_size=16, level_sizes=(4, 2), channels=8)
    config = DetectorConfig(backbone=backbone, variant=variant, pose_head_channels=6)
    model = ShaftDetector(config, rng, dtype=np.float64, input_grad=True)
    anchors = build_anchors(backbone)
    ranges = PoseRanges()
    loss_cfg = LossConfig()

    gt_boxes = [(2.0, 3.0, 11.0, 12.0)]
    gt_poses = [ShaftPose(5.0, -3.0, 20.0, 70.0, 120.0)]
    match = match_anchors(anchors, gt_boxes, 0.5)
    targets = [build_targets(anchors, match, gt_boxes, gt_poses, ranges)]

    image = rng.uniform(-1.0, 1.0, (1, 16, 16, 3))
    params = model.params()

    def computation(inputs):
        for p, val in zip(params, inputs[1:]):
            p.value = val
        outputs = model.forward(inputs[0], train=True)
        cls, box, pose = model.flatten_outputs(outputs)
        breakdown, (d_cls, d_box, d_pose) = total_loss(cls, box, pose, targets, loss_cfg)
        model.zero_grads()
        g_image = model.backward(model.unflatten_grads(d_cls, d_box, d_pose))
        return breakdown.total, [g_image] + [p.grad.copy() for p in params]

    inputs = [image] + [p.value.copy() for p in params]
    return grad_check(
        computation, inputs, sample=sample_per_tensor, rng=np.random.default_rng(seed + 1)
    )


def run_gradient_suite(trials: int = 3, seed: int = 0) -> list[OpCheckResult]:
    """The nn op suite plus both end-to-end variants, in a fixed order."""
    results = run_nn_op_suite(trials=trials, seed=seed)
    for variant in ("c", "d"):
        err = check_end_to_end_loss(variant, seed=seed)
        results.append(
            OpCheckResult(
                op=f"end_to_end_loss_variant_{variant}",
                max_rel_err=err,
                tolerance=END_TO_END_TOLERANCE,
            )
        )
    return results
