"""Evaluation metrics and the detection cleanup rules, step by step.

Covers the all-points interpolated AP on a hand-checkable ranking, the
duplicate/wrong-class F1 rules, and the two postprocessing passes: caption
reclassification from OCR tokens and conflict-free figure/table merging. Run
from the repository root:

    python3 demos/06_metrics_and_postprocessing.py
"""

from pagedet.classifier import Detection
from pagedet.geometry import BBox
from pagedet.metrics import AnnotationBox, PageAnnotations, f1_counts, voc_ap
from pagedet.postprocess import (
    TokenEntry,
    TokenSidecar,
    merge_figures,
    reclassify_captions,
)

print("== average precision on a hand-checkable ranking ==")
gts = PageAnnotations("p", 640, 880, [
    AnnotationBox("Figure", BBox(0, 0, 10, 10)),
    AnnotationBox("Figure", BBox(100, 0, 110, 10))])
dets = [Detection(BBox(0, 0, 10, 10), "Figure", 0.9),    # TP at rank 1
        Detection(BBox(50, 50, 60, 60), "Figure", 0.8),  # FP at rank 2
        Detection(BBox(100, 0, 110, 10), "Figure", 0.7)] # TP at rank 3
ap = voc_ap([(dets, gts)], "Figure")
print("ranked TP, FP, TP over two GTs:")
print(f"  precision at the two recall steps: 1/1 and 2/3")
print(f"  AP = (1 + 2/3) / 2 = {ap:.6f}  (= 5/6)")

print("\n== F1 counting rules ==")
dup = dets + [Detection(BBox(0, 0, 10, 10), "Figure", 0.6)]  # duplicate hit
counts = f1_counts([(dup, gts)], ["Figure"])
c = counts["per_class"]["Figure"]
print(f"adding a duplicate detection of a matched GT: tp {c['tp']}, "
      f"fp {c['fp']}, fn {c['fn']}")
print("the duplicate becomes a false positive; stray boxes that overlap "
      "nothing are ignored unless strict counting is on")

print("\n== caption reclassification ==")
body = Detection(BBox(10, 10, 110, 30), "Body Text", 0.9)
plain = Detection(BBox(10, 200, 110, 220), "Body Text", 0.8)
sidecar = TokenSidecar([TokenEntry(body.bbox, ["Figure", "4:"]),
                        TokenEntry(plain.bbox, ["The", "results"])])
out = reclassify_captions([body, plain], sidecar)
for before, after in zip([body, plain], out):
    mark = "->" if before.cls != after.cls else "=="
    print(f"  tokens {sidecar.tokens_for(before.bbox)}: "
          f"{before.cls} {mark} {after.cls}")

print("\n== figure merging ==")
gt = PageAnnotations("f", 640, 880, [
    AnnotationBox("Figure", BBox(100, 100, 300, 300))])
halves = [Detection(BBox(100, 100, 300, 200), "Figure", 0.8),
          Detection(BBox(100, 210, 300, 300), "Figure", 0.7)]
print(f"two half-figure detections vs one GT figure:")
print(f"  AP before merging: {voc_ap([(halves, gt)], 'Figure')}")
merged = merge_figures(halves)
print(f"  merged into {merged[0].bbox.to_list()} score {merged[0].score}")
print(f"  AP after merging:  {voc_ap([(merged, gt)], 'Figure')}")
print("merging only fires when the union rectangle contains no detection of "
      "another class, so correct neighbors never get swallowed")
