"""Segmentation metrics: mIoU and F-score (β² = 0.3)."""
import json
import logging
import math
from collections import defaultdict
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field

from prefect_avs.errors import DimensionMismatchError

logger = logging.getLogger(__name__)

default_beta2 = 0.3


def _as_videos(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionMismatchError(f"prediction {pred.shape} and ground truth {gt.shape} disagree")
    if pred.ndim == 2:
        pred, gt = pred[None, None], gt[None, None]
    elif pred.ndim == 3:
        pred, gt = pred[None], gt[None]
    elif pred.ndim != 4:
        raise DimensionMismatchError(f"masks must be (H, W), (T, H, W) or (V, T, H, W); got {pred.shape}")
    return pred, gt


def binary_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """IoU of two boolean masks; two empty masks agree perfectly."""
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def binary_f_score(pred: np.ndarray, gt: np.ndarray, beta2: float = default_beta2) -> float:
    """
    F_β = (1+β²)·P·R / (β²·P + R); two empty masks score 1, a zero
    denominator otherwise scores 0.
    """
    predicted, actual = int(pred.sum()), int(gt.sum())
    if predicted == 0 and actual == 0:
        return 1.0
    tp = int(np.logical_and(pred, gt).sum())
    precision = tp / predicted if predicted else 0.0
    recall = tp / actual if actual else 0.0
    denominator = beta2 * precision + recall
    if denominator == 0:
        return 0.0
    return (1 + beta2) * precision * recall / denominator


def _video_scores(pred: np.ndarray, gt: np.ndarray, num_classes: int, beta2: float) -> tuple[float, float, dict[int, float]]:
    """(mIoU, F-score, per-class IoU) of one (T, H, W) video."""
    if num_classes == 1:
        fg_pred, fg_gt = pred > 0, gt > 0
        ious = [binary_iou(p, g) for p, g in zip(fg_pred, fg_gt)]
        fscores = [binary_f_score(p, g, beta2) for p, g in zip(fg_pred, fg_gt)]
        return math.fsum(ious) / len(ious), math.fsum(fscores) / len(fscores), {}

    classes = sorted(int(c) for c in np.union1d(np.unique(pred), np.unique(gt)) if c != 0)
    if not classes:
        return 1.0, 1.0, {}
    per_class = {c: binary_iou(pred == c, gt == c) for c in classes}
    fscores = [binary_f_score(pred == c, gt == c, beta2) for c in classes]
    return math.fsum(per_class.values()) / len(classes), math.fsum(fscores) / len(classes), per_class


def miou(pred_mask: np.ndarray, gt_mask: np.ndarray, num_classes: int = 1) -> float:
    """
    Mean IoU. K = 1: foreground IoU averaged over frames, then videos.
    K > 1: per-class IoU over the classes present in pred ∪ gt (background
    excluded), averaged over classes, then videos. Each class IoU pools
    intersection and union over all frames of the video, so frames where a
    class covers more pixels weigh more.
    """
    accumulator = MetricAccumulator(num_classes)
    accumulator.update(pred_mask, gt_mask)
    return accumulator.report().miou


def f_score(pred_mask: np.ndarray, gt_mask: np.ndarray, beta2: float = default_beta2, num_classes: int = 1) -> float:
    accumulator = MetricAccumulator(num_classes, beta2=beta2)
    accumulator.update(pred_mask, gt_mask)
    return accumulator.report().f_score


class MetricReport(BaseModel):
    miou: float = Field(..., ge=0.0, le=1.0, description="Mean intersection over union")
    f_score: float = Field(..., ge=0.0, le=1.0, description="F-score with β² = 0.3")
    per_class_iou: Optional[dict[int, float]] = Field(None, description="Mean IoU per category id (K > 1)")
    num_videos: int = 0

    def to_flat(self) -> dict[str, float | int]:
        flat: dict[str, float | int] = {"miou": self.miou, "f_score": self.f_score, "num_videos": self.num_videos}
        for class_id, value in sorted((self.per_class_iou or {}).items()):
            flat[f"iou_class_{class_id}"] = value
        return flat

    def dump(self, path: str | Path) -> None:
        """Write `key value` lines to `path` and the same table as JSON next to it."""
        path = Path(path)
        flat = self.to_flat()
        path.write_text("".join(f"{key} {value}\n" for key, value in flat.items()))
        path.with_suffix(".json").write_text(json.dumps(flat, indent=2, sort_keys=True))
        logger.info("Wrote metrics (mIoU %.4f, F %.4f) to %s", self.miou, self.f_score, path)


class MetricAccumulator:
    """
    Per-video metric collection. Reduction uses correctly rounded sums, so the
    report does not depend on the order videos were added or merged in.
    """

    def __init__(self, num_classes: int = 1, beta2: float = default_beta2):
        self.num_classes = num_classes
        self.beta2 = beta2
        self.ious: list[float] = []
        self.fscores: list[float] = []
        self.class_ious: dict[int, list[float]] = defaultdict(list)

    def update(self, pred_mask: np.ndarray, gt_mask: np.ndarray) -> None:
        """Add one (T, H, W) video or a (V, T, H, W) stack of videos."""
        pred, gt = _as_videos(pred_mask, gt_mask)
        for video_pred, video_gt in zip(pred, gt):
            video_iou, video_f, per_class = _video_scores(video_pred, video_gt, self.num_classes, self.beta2)
            self.ious.append(video_iou)
            self.fscores.append(video_f)
            for class_id, value in per_class.items():
                self.class_ious[class_id].append(value)

    def merge(self, other: "MetricAccumulator") -> "MetricAccumulator":
        merged = MetricAccumulator(self.num_classes, self.beta2)
        merged.ious = self.ious + other.ious
        merged.fscores = self.fscores + other.fscores
        for source in (self.class_ious, other.class_ious):
            for class_id, values in source.items():
                merged.class_ious[class_id].extend(values)
        return merged

    def report(self) -> MetricReport:
        if not self.ious:
            raise ValueError("no videos were added to the metric accumulator")
        count = len(self.ious)
        per_class = None
        if self.num_classes > 1:
            per_class = {c: math.fsum(v) / len(v) for c, v in sorted(self.class_ious.items())}
        return MetricReport(
            miou=math.fsum(self.ious) / count,
            f_score=math.fsum(self.fscores) / count,
            per_class_iou=per_class,
            num_videos=count,
        )
