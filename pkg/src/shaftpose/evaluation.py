"""Evaluation metrics: VOC-2010 AP, detected rate, pose error, re-render IoU."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .datagen import Dataset
from .detector.anchors import AnchorSet, box_iou_matrix
from .detector.model import ShaftDetector
from .errors import ConfigError
from .geometry import POSE_DIMS, PoseRanges, ShaftPose, yaw_error
from .inference import Detection, detect
from .rendering import mask_iou, render_silhouette


def average_precision(detections, gts, iou_threshold: float = 0.5) -> float:
    """All-point interpolated AP (PASCAL VOC 2010 style).

    ``detections`` is a list of (image_id, score, box); ``gts`` maps
    image_id to a list of ground-truth boxes. Detections are processed
    in descending score order; each is assigned its highest-IoU ground
    truth in that image and counts as a true positive only when the IoU
    clears the threshold and that ground truth is still unclaimed.
    """
    n_gt = sum(len(v) for v in gts.values())
    if n_gt == 0:
        return 0.0
    if not detections:
        return 0.0
    order = sorted(range(len(detections)), key=lambda i: -detections[i][1])
    taken: dict = {img: np.zeros(len(boxes), dtype=bool) for img, boxes in gts.items()}
    tp = np.zeros(len(order))
    fp = np.zeros(len(order))
    for rank, i in enumerate(order):
        img, _, box = detections[i]
        boxes = gts.get(img, [])
        if len(boxes) == 0:
            fp[rank] = 1
            continue
        ious = box_iou_matrix(np.asarray(box).reshape(1, 4), np.asarray(boxes))[0]
        j = int(np.argmax(ious))
        if ious[j] >= iou_threshold and not taken[img][j]:
            taken[img][j] = True
            tp[rank] = 1
        else:
            fp[rank] = 1

    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(fp)
    recall = cum_tp / n_gt
    precision = cum_tp / np.maximum(cum_tp + cum_fp, 1)

    # Monotone precision envelope, integrated over recall.
    mrec = np.concatenate([[0.0], recall])
    mpre = np.concatenate([[0.0], precision])
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    return float(np.sum((mrec[1:] - mrec[:-1]) * mpre[1:]))


def mean_average_precision(detections, gts, iou_threshold: float = 0.5) -> float:
    """Single foreground class, so mAP equals AP."""
    return average_precision(detections, gts, iou_threshold)


def detected_rate(per_image_detections, per_image_gts, iou_threshold: float = 0.5) -> float:
    """Fraction of ground truths covered by at least one detection.

    Duplicate detections of one instrument count once and are not
    penalized.
    """
    n_gt = 0
    n_hit = 0
    for dets, gt_boxes in zip(per_image_detections, per_image_gts):
        if len(gt_boxes) == 0:
            continue
        n_gt += len(gt_boxes)
        if len(dets) == 0:
            continue
        det_boxes = np.asarray([d.bbox for d in dets])
        iou = box_iou_matrix(np.asarray(gt_boxes), det_boxes)
        n_hit += int((iou.max(axis=1) >= iou_threshold).sum())
    return n_hit / n_gt if n_gt else 0.0


@dataclass
class PoseErrorReport:
    mae: dict[str, float]
    n_matched: int
    n_unmatched: int
    abs_errors: dict[str, list] = field(default_factory=dict, repr=False)


def pose_error_report(per_image_detections, per_image_gts, iou_threshold: float = 0.5) -> PoseErrorReport:
    """Per-dimension MAE over ground truths matched to their best detection.

    Each pose-labeled ground truth is matched to the highest-IoU
    detection at IoU >= threshold; unmatched ground truths are excluded
    from the MAE and counted separately. Yaw error is circular.
    """
    errs = {k: [] for k in POSE_DIMS}
    n_matched = 0
    n_unmatched = 0
    for dets, gts in zip(per_image_detections, per_image_gts):
        for gt_box, gt_pose in gts:
            if gt_pose is None:
                continue
            best = _best_match(dets, gt_box, iou_threshold, by="iou")
            if best is None:
                n_unmatched += 1
                continue
            n_matched += 1
            pred = best.pose
            errs["x"].append(abs(pred.x - gt_pose.x))
            errs["y"].append(abs(pred.y - gt_pose.y))
            errs["z"].append(abs(pred.z - gt_pose.z))
            errs["pitch"].append(abs(pred.pitch - gt_pose.pitch))
            errs["yaw"].append(yaw_error(pred.yaw, gt_pose.yaw))
    mae = {k: float(np.mean(v)) if v else float("nan") for k, v in errs.items()}
    return PoseErrorReport(mae=mae, n_matched=n_matched, n_unmatched=n_unmatched, abs_errors=errs)


def _best_match(dets: list[Detection], gt_box, iou_threshold: float, by: str):
    if not dets:
        return None
    det_boxes = np.asarray([d.bbox for d in dets])
    ious = box_iou_matrix(np.asarray(gt_box).reshape(1, 4), det_boxes)[0]
    ok = np.flatnonzero(ious >= iou_threshold)
    if ok.size == 0:
        return None
    if by == "iou":
        return dets[int(ok[np.argmax(ious[ok])])]
    scores = np.asarray([dets[i].score for i in ok])
    return dets[int(ok[np.argmax(scores)])]


def rerender_iou(per_image_detections, per_image_gt_masks, camera, geom, iou_threshold: float = 0.5) -> tuple[float, int]:
    """Mean silhouette IoU between matched detections and stored masks.

    Per ground truth the highest-score detection at box IoU >= threshold
    is re-rendered from its estimated pose; unmatched ground truths
    contribute IoU 0. Returns (mean, count).
    """
    vals = []
    for dets, gts in zip(per_image_detections, per_image_gt_masks):
        for gt_box, gt_mask in gts:
            best = _best_match(dets, gt_box, iou_threshold, by="score")
            if best is None:
                vals.append(0.0)
                continue
            sil = render_silhouette(camera, best.pose, geom)
            vals.append(mask_iou(sil, gt_mask))
    return (float(np.mean(vals)) if vals else 0.0, len(vals))


@dataclass
class EvalReport:
    map: float
    detected_rate: float
    pose_mae: dict[str, float]
    mean_rerender_iou: float
    counts: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "mAP": self.map,
            "detected_rate": self.detected_rate,
            "pose_mae": self.pose_mae,
            "mean_rerender_iou": self.mean_rerender_iou,
            "counts": self.counts,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text_table(self, label: str = "model") -> str:
        cols = [
            ("mAP", f"{self.map:.3f}"),
            ("Detected rate", f"{self.detected_rate:.3f}"),
            ("x [mm]", f"{self.pose_mae['x']:.2f}"),
            ("y [mm]", f"{self.pose_mae['y']:.2f}"),
            ("z [mm]", f"{self.pose_mae['z']:.2f}"),
            ("pitch [deg]", f"{self.pose_mae['pitch']:.2f}"),
            ("yaw [deg]", f"{self.pose_mae['yaw']:.2f}"),
            ("Rerender IoU", f"{self.mean_rerender_iou:.3f}"),
        ]
        name_w = max(len(label), 5)
        widths = [max(len(h), len(v)) for h, v in cols]
        header = " " * name_w + "  " + "  ".join(h.rjust(w) for (h, _), w in zip(cols, widths))
        row = label.ljust(name_w) + "  " + "  ".join(v.rjust(w) for (_, v), w in zip(cols, widths))
        return header + "\n" + row + "\n"


def evaluate_model(
    model: ShaftDetector,
    anchors: AnchorSet,
    dataset: Dataset,
    score_threshold: float = 0.5,
    nms_iou: float = 0.45,
    match_iou: float = 0.5,
    top_k: int = 250,
    per_image_log=None,
) -> EvalReport:
    """Run detection over a dataset and aggregate every metric."""
    size = model.config.backbone.input_size
    if dataset.camera.width != size or dataset.camera.height != size:
        raise ConfigError(
            f"dataset images are {dataset.camera.width}x{dataset.camera.height} "
            f"but the model expects {size}x{size}"
        )

    all_dets = []
    per_image_dets = []
    per_image_boxes = []
    per_image_posed = []
    per_image_masked = []
    gts_by_image = {}
    for record in dataset.records:
        image = dataset.load_image(record)
        dets = detect(
            model, anchors, image, dataset.ranges,
            score_threshold=score_threshold, nms_iou=nms_iou, top_k=top_k,
        )
        per_image_dets.append(dets)
        boxes = [a.bbox for a in record.annotations]
        per_image_boxes.append(boxes)
        gts_by_image[record.index] = boxes
        all_dets.extend((record.index, d.score, d.bbox) for d in dets)
        per_image_posed.append([(a.bbox, a.pose) for a in record.annotations])
        per_image_masked.append(
            [
                (a.bbox, dataset.load_mask(a))
                for a in record.annotations
                if a.mask_path is not None
            ]
        )
        if per_image_log is not None:
            per_image_log.write(
                json.dumps(
                    {
                        "index": record.index,
                        "detections": [d.to_dict() for d in dets],
                        "gt_boxes": [list(b) for b in boxes],
                    }
                )
                + "\n"
            )

    ap = mean_average_precision(all_dets, gts_by_image, match_iou)
    rate = detected_rate(per_image_dets, per_image_boxes, match_iou)
    pose_report = pose_error_report(per_image_dets, per_image_posed, match_iou)
    mean_iou, iou_count = rerender_iou(
        per_image_dets, per_image_masked, dataset.camera, dataset.geometry, match_iou
    )

    n_gt = sum(len(b) for b in per_image_boxes)
    hit = round(rate * n_gt)
    counts = {
        "n_images": len(dataset.records),
        "n_gt": n_gt,
        "n_detections": len(all_dets),
        "true_positives": int(hit),
        "false_negatives": int(n_gt - hit),
        "pose_matched": pose_report.n_matched,
        "pose_unmatched": pose_report.n_unmatched,
        "rerender_evaluated": iou_count,
    }
    return EvalReport(
        map=ap,
        detected_rate=rate,
        pose_mae=pose_report.mae,
        mean_rerender_iou=mean_iou,
        counts=counts,
    )


def midpoint_baseline_mae(dataset: Dataset, ranges: PoseRanges | None = None) -> dict[str, float]:
    """Per-dimension MAE of the constant range-midpoint predictor.

    The reference bar for judging a trained model: predicting the
    midpoint of every pose range for every instrument, evaluated with
    the same circular yaw metric.
    """
    ranges = ranges or dataset.ranges
    mid = ranges.midpoint()
    errs = {k: [] for k in POSE_DIMS}
    for record in dataset.records:
        for a in record.annotations:
            if a.pose is None:
                continue
            errs["x"].append(abs(mid.x - a.pose.x))
            errs["y"].append(abs(mid.y - a.pose.y))
            errs["z"].append(abs(mid.z - a.pose.z))
            errs["pitch"].append(abs(mid.pitch - a.pose.pitch))
            errs["yaw"].append(yaw_error(mid.yaw, a.pose.yaw))
    return {k: float(np.mean(v)) if v else float("nan") for k, v in errs.items()}
