"""Evaluation: VOC-style AP, rule-based F1 counts, and confusion matrices.

AP uses all-points interpolation with greedy score-ordered matching. The F1
counts follow three literal rules: a true positive needs IoU above 0.8 with
an unmatched ground-truth box of the same class (one per GT); a false
positive is a wrong-class overlap above 0.8, or at least 0.7 IoU with an
already-matched GT. Detections matching nothing at 0.7 count toward nothing
by default; strict_fp mode counts them as false positives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import BBox, iou


@dataclass
class AnnotationBox:
    cls: str
    bbox: BBox


@dataclass
class PageAnnotations:
    page_id: str
    width: int
    height: int
    annotations: list[AnnotationBox] = field(default_factory=list)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("page dimensions must be positive")
        for a in self.annotations:
            b = a.bbox
            if b.x0 < 0 or b.y0 < 0 or b.x1 > self.width or b.y1 > self.height:
                raise ValueError(f"annotation box {b} outside {self.width}x{self.height} page")


def save_annotations(annots: PageAnnotations, path) -> None:
    doc = {"page_id": annots.page_id,
           "size": [annots.width, annots.height],
           "annotations": [{"class": a.cls, "bbox": a.bbox.to_list()}
                           for a in annots.annotations]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_annotations(path) -> PageAnnotations:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"annotations file not found: {path}")
    doc = json.loads(path.read_text())
    w, h = doc["size"]
    boxes = [AnnotationBox(str(a["class"]), BBox.from_list(a["bbox"]))
             for a in doc["annotations"]]
    return PageAnnotations(str(doc["page_id"]), int(w), int(h), boxes)


def _ranked(dets_per_page: list[list]) -> list[tuple[int, object]]:
    """(page, det) pairs in descending score, ties kept in input order."""
    flat = []
    for p, dets in enumerate(dets_per_page):
        for d in dets:
            flat.append((p, d))
    order = sorted(range(len(flat)), key=lambda k: (-flat[k][1].score, k))
    return [flat[k] for k in order]


def voc_ap(pages: list[tuple[list, PageAnnotations]], cls: str,
           iou_thresh: float = 0.8) -> float | None:
    """All-points interpolated AP for one class; None when the class has no GT."""
    gts = [[a for a in annots.annotations if a.cls == cls] for _, annots in pages]
    n_gt = sum(len(g) for g in gts)
    if n_gt == 0:
        return None
    matched = [[False] * len(g) for g in gts]
    cls_dets = [[d for d in dets if d.cls == cls] for dets, _ in pages]
    tp_flags = []
    for p, det in _ranked(cls_dets):
        best_iou = 0.0
        best_k = -1
        for k, ann in enumerate(gts[p]):
            if matched[p][k]:
                continue
            v = iou(det.bbox, ann.bbox)
            if v > best_iou:
                best_iou = v
                best_k = k
        if best_k >= 0 and best_iou >= iou_thresh:
            matched[p][best_k] = True
            tp_flags.append(1.0)
        else:
            tp_flags.append(0.0)
    if not tp_flags:
        return 0.0
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(1.0 - np.asarray(tp_flags))
    recall = tp / n_gt
    precision = tp / (tp + fp)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def f1_counts(pages: list[tuple[list, PageAnnotations]], classes: list[str],
              iou_tp: float = 0.8, iou_dup: float = 0.7,
              strict_fp: bool = False) -> dict:
    """Per-class and aggregate TP/FP/FN with precision, recall and F1."""
    tp = {c: 0 for c in classes}
    fp = {c: 0 for c in classes}
    fn = {c: 0 for c in classes}
    for dets, annots in pages:
        for a in annots.annotations:
            if a.cls not in tp:
                raise ValueError(f"ground-truth class {a.cls!r} not in vocabulary")
        matched = [False] * len(annots.annotations)
        order = sorted(range(len(dets)), key=lambda k: (-dets[k].score, k))
        for k in order:
            det = dets[k]
            if det.cls not in tp:
                raise ValueError(f"detection class {det.cls!r} not in vocabulary")
            ious = [iou(det.bbox, a.bbox) for a in annots.annotations]
            best_k = -1
            best_v = iou_tp
            for g, (a, v) in enumerate(zip(annots.annotations, ious)):
                if not matched[g] and a.cls == det.cls and v > best_v:
                    best_v = v
                    best_k = g
            if best_k >= 0:
                matched[best_k] = True
                tp[det.cls] += 1
                continue
            wrong_class = any(v > iou_tp and a.cls != det.cls
                              for a, v in zip(annots.annotations, ious))
            duplicate = any(v >= iou_dup and matched[g]
                            for g, v in enumerate(ious))
            if wrong_class or duplicate or strict_fp:
                fp[det.cls] += 1
        for g, a in enumerate(annots.annotations):
            if not matched[g]:
                fn[a.cls] += 1
    per_class = {}
    for c in classes:
        p = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] else 0.0
        r = tp[c] / (tp[c] + fn[c]) if tp[c] + fn[c] else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        per_class[c] = {"tp": tp[c], "fp": fp[c], "fn": fn[c],
                        "precision": p, "recall": r, "f1": f}
    t, f_, n = sum(tp.values()), sum(fp.values()), sum(fn.values())
    p = t / (t + f_) if t + f_ else 0.0
    r = t / (t + n) if t + n else 0.0
    agg = {"tp": t, "fp": f_, "fn": n, "precision": p, "recall": r,
           "f1": 2 * p * r / (p + r) if p + r else 0.0}
    return {"per_class": per_class, "aggregate": agg}


def confusion_matrix(pages: list[tuple[list, PageAnnotations]], classes: list[str],
                     iou_thresh: float = 0.8) -> np.ndarray:
    """(n_classes, n_classes + 1) counts; the extra column is "missed" GTs.

    Each GT is matched to its highest-IoU detection at IoU >= iou_thresh; ties
    go to the earlier detection in input order.
    """
    index = {c: i for i, c in enumerate(classes)}
    mat = np.zeros((len(classes), len(classes) + 1), dtype=int)
    for dets, annots in pages:
        for a in annots.annotations:
            best_v = iou_thresh
            best_d = None
            for d in dets:
                v = iou(a.bbox, d.bbox)
                if v >= best_v and (best_d is None or v > best_v):
                    best_v = v
                    best_d = d
            row = index[a.cls]
            if best_d is None:
                mat[row, len(classes)] += 1
            else:
                mat[row, index[best_d.cls]] += 1
    return mat


def apply_group_score(member_scores: list[float]) -> float:
    """Score for a merged detection: the highest score within the group."""
    if not member_scores:
        raise ValueError("empty group")
    return max(member_scores)


def validate_group_score(member_scores: list[float], merged_score: float) -> None:
    expected = apply_group_score(member_scores)
    if merged_score != expected:
        raise ValueError(f"merged score {merged_score} != max member score {expected}")


@dataclass
class MetricReport:
    classes: list[str]
    per_class: dict
    aggregate: dict
    map_value: float | None
    confusion: list  # rows: classes, cols: classes + ["missed"]

    def to_dict(self) -> dict:
        return {"classes": list(self.classes),
                "per_class": self.per_class,
                "aggregate": self.aggregate,
                "mAP": self.map_value,
                "confusion": {"columns": list(self.classes) + ["missed"],
                              "rows": self.confusion}}


def evaluate_corpus(pages: list[tuple[list, PageAnnotations]], classes: list[str],
                    iou_thresh: float = 0.8, strict_fp: bool = False) -> MetricReport:
    """AP per class, F1 counts and a confusion matrix over a paired corpus."""
    counts = f1_counts(pages, classes, iou_tp=iou_thresh, strict_fp=strict_fp)
    per_class = {}
    aps = []
    for c in classes:
        ap = voc_ap(pages, c, iou_thresh)
        entry = dict(counts["per_class"][c])
        entry["ap"] = ap
        per_class[c] = entry
        if ap is not None:
            aps.append(ap)
    mat = confusion_matrix(pages, classes, iou_thresh)
    return MetricReport(classes=list(classes), per_class=per_class,
                        aggregate=counts["aggregate"],
                        map_value=float(np.mean(aps)) if aps else None,
                        confusion=mat.tolist())


def save_report(report: MetricReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")


def load_report(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"report not found: {path}")
    return json.loads(path.read_text())
