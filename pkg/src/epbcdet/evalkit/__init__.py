"""Detection metrics: IoU, NMS, matching, AP/mAP, PR curves, confusion matrix."""
from .boxes import DetectionBox, boxes_array, iou, iou_matrix, nms
from .io import (read_boxes, read_confusion_csv, read_pr_csv, write_boxes, write_confusion_csv,
                 write_metrics_csv, write_pr_csv)
from .metrics import (IOU_THRESHOLDS, ClassCounts, MatchCounts, MatchResult, MetricReport, PRCurve,
                      average_precision, confusion_matrix, evaluate, match, normalize_rows, pr_curve,
                      precision, recall)

__all__ = [
    "DetectionBox", "iou", "iou_matrix", "boxes_array", "nms",
    "match", "MatchCounts", "ClassCounts", "MatchResult", "precision", "recall",
    "PRCurve", "pr_curve", "average_precision", "evaluate", "MetricReport", "IOU_THRESHOLDS",
    "confusion_matrix", "normalize_rows",
    "read_boxes", "write_boxes", "write_metrics_csv", "write_pr_csv", "write_confusion_csv",
    "read_pr_csv", "read_confusion_csv",
]
