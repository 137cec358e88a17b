"""Average precision, rule-based F1 counts, confusion matrices and reports."""

import numpy as np
import pytest

from metric_refs import CLASSES, random_instance, ref_ap, ref_f1
from pagedet.classifier import Detection
from pagedet.geometry import BBox
from pagedet.metrics import (
    AnnotationBox,
    PageAnnotations,
    apply_group_score,
    confusion_matrix,
    evaluate_corpus,
    f1_counts,
    load_annotations,
    load_report,
    save_annotations,
    save_report,
    validate_group_score,
    voc_ap,
)


def det(x0, y0, x1, y1, cls, score):
    return Detection(BBox(x0, y0, x1, y1), cls, score)


def ann(cls, x0, y0, x1, y1):
    return AnnotationBox(cls, BBox(x0, y0, x1, y1))


def page(annotations, w=300, h=300, pid="p"):
    return PageAnnotations(pid, w, h, annotations)


def test_ap_ranked_tp_fp_tp_over_two_gts_is_five_sixths():
    gts = page([ann("Figure", 0, 0, 10, 10), ann("Figure", 100, 0, 110, 10)])
    dets = [det(0, 0, 10, 10, "Figure", 0.9),     # TP at rank 1
            det(50, 50, 60, 60, "Figure", 0.8),   # FP at rank 2
            det(100, 0, 110, 10, "Figure", 0.7)]  # TP at rank 3
    ap = voc_ap([(dets, gts)], "Figure")
    assert abs(ap - 5.0 / 6.0) < 1e-12
    assert abs(ref_ap([(dets, gts)], "Figure") - 5.0 / 6.0) < 1e-12


def test_ap_perfect_and_empty_cases():
    gts = page([ann("Table", 10, 10, 60, 60)])
    exact = [det(10, 10, 60, 60, "Table", 0.9)]
    assert voc_ap([(exact, gts)], "Table") == pytest.approx(1.0, abs=1e-12)
    assert voc_ap([([], gts)], "Table") == 0.0
    assert voc_ap([(exact, gts)], "Equation") is None  # class has no GT


def test_ap_one_tp_per_ground_truth():
    gts = page([ann("Figure", 0, 0, 20, 20)])
    dets = [det(0, 0, 20, 20, "Figure", 0.9),
            det(0, 0, 20, 20, "Figure", 0.8)]  # second exact match is an FP
    # precision curve: 1/1 then 1/2; single recall step at 1.0
    assert voc_ap([(dets, gts)], "Figure") == pytest.approx(1.0, abs=1e-12)
    flipped = [det(0, 0, 20, 20, "Figure", 0.8),
               det(50, 50, 70, 70, "Figure", 0.9)]  # FP outranks the TP
    assert voc_ap([(flipped, gts)], "Figure") == pytest.approx(0.5, abs=1e-12)


def test_ap_matches_reference_on_randomized_instances():
    rng = np.random.default_rng(71)
    for _ in range(30):
        pages = random_instance(rng)
        for cls in CLASSES:
            got = voc_ap(pages, cls)
            want = ref_ap(pages, cls)
            if want is None:
                assert got is None
            else:
                assert abs(got - want) < 1e-12
                assert 0.0 <= got <= 1.0


def test_tp_requires_iou_strictly_above_threshold():
    gts = page([ann("A", 0, 0, 10, 10)])
    dets = [det(0, 0, 10, 8, "A", 0.9)]  # IoU exactly 0.8
    counts = f1_counts([(dets, gts)], ["A"])
    assert counts["per_class"]["A"]["tp"] == 0
    assert counts["per_class"]["A"]["fp"] == 0  # not wrong-class, not duplicate
    assert counts["per_class"]["A"]["fn"] == 1


def test_duplicate_fp_threshold_is_inclusive():
    gts = page([ann("A", 0, 0, 10, 10)])
    dup = [det(0, 0, 10, 10, "A", 0.9),  # TP
           det(0, 0, 10, 7, "A", 0.8)]   # IoU 0.7 with the matched GT
    counts = f1_counts([(dup, gts)], ["A"])
    assert (counts["per_class"]["A"]["tp"], counts["per_class"]["A"]["fp"]) == (1, 1)
    below = [det(0, 0, 10, 10, "A", 0.9),
             det(0, 0, 10, 6, "A", 0.8)]  # IoU 0.6: matches nothing, ignored
    counts = f1_counts([(below, gts)], ["A"])
    assert (counts["per_class"]["A"]["tp"], counts["per_class"]["A"]["fp"]) == (1, 0)


def test_wrong_class_overlap_is_a_false_positive():
    gts = page([ann("A", 0, 0, 10, 10)])
    dets = [det(0, 0, 10, 10, "B", 0.9)]
    counts = f1_counts([(dets, gts)], ["A", "B"])
    assert counts["per_class"]["B"]["fp"] == 1
    assert counts["per_class"]["A"]["fn"] == 1
    assert counts["aggregate"]["tp"] == 0


def test_strict_fp_counts_unmatched_detections():
    gts = page([ann("A", 0, 0, 10, 10)])
    dets = [det(100, 100, 120, 120, "A", 0.9)]  # overlaps nothing
    relaxed = f1_counts([(dets, gts)], ["A"])
    strict = f1_counts([(dets, gts)], ["A"], strict_fp=True)
    assert relaxed["per_class"]["A"]["fp"] == 0
    assert strict["per_class"]["A"]["fp"] == 1


def test_f1_rejects_unknown_classes():
    gts = page([ann("A", 0, 0, 10, 10)])
    with pytest.raises(ValueError, match="vocabulary"):
        f1_counts([([det(0, 0, 10, 10, "Z", 0.9)], gts)], ["A"])
    with pytest.raises(ValueError, match="vocabulary"):
        f1_counts([([], gts)], ["B"])


def test_f1_matches_reference_and_count_invariants():
    rng = np.random.default_rng(73)
    for _ in range(30):
        pages = random_instance(rng)
        for strict in (False, True):
            got = f1_counts(pages, CLASSES, strict_fp=strict)
            want = ref_f1(pages, CLASSES, strict_fp=strict)
            n_gt = {c: sum(1 for _, a in pages for x in a.annotations if x.cls == c)
                    for c in CLASSES}
            for c in CLASSES:
                pc = got["per_class"][c]
                assert (pc["tp"], pc["fp"], pc["fn"]) == tuple(want[c])
                assert pc["tp"] + pc["fn"] == n_gt[c]
                for key, num, den in (("precision", pc["tp"], pc["tp"] + pc["fp"]),
                                      ("recall", pc["tp"], pc["tp"] + pc["fn"])):
                    expect = num / den if den else 0.0
                    assert abs(pc[key] - expect) < 1e-12


def test_confusion_matrix_examples():
    classes = ["Equation", "Figure"]
    gts = page([ann("Equation", 0, 0, 10, 10),   # matched by a Figure det
                ann("Figure", 50, 50, 60, 60)])  # missed
    dets = [det(0, 0, 10, 9, "Figure", 0.9)]     # IoU 0.9 with the equation
    mat = confusion_matrix([(dets, gts)], classes)
    assert mat.shape == (2, 3)
    assert mat[0].tolist() == [0, 1, 0]
    assert mat[1].tolist() == [0, 0, 1]  # missed column


def test_confusion_matrix_tie_prefers_earlier_detection():
    classes = ["A", "B"]
    gts = page([ann("A", 0, 0, 10, 10)])
    dets = [det(0, 0, 10, 9, "B", 0.5), det(0, 1, 10, 10, "A", 0.9)]  # equal IoU
    mat = confusion_matrix([(dets, gts)], classes)
    assert mat[0].tolist() == [0, 1, 0]


def test_confusion_matrix_row_sums_equal_gt_counts():
    rng = np.random.default_rng(79)
    for _ in range(10):
        pages = random_instance(rng)
        mat = confusion_matrix(pages, CLASSES)
        for i, c in enumerate(CLASSES):
            n_gt = sum(1 for _, a in pages for x in a.annotations if x.cls == c)
            assert mat[i].sum() == n_gt


def test_group_score_is_max_of_members():
    assert apply_group_score([0.4, 0.9]) == 0.9
    assert apply_group_score([0.25]) == 0.25
    with pytest.raises(ValueError):
        apply_group_score([])
    validate_group_score([0.4, 0.9], 0.9)
    with pytest.raises(ValueError, match="max member"):
        validate_group_score([0.4, 0.9], 0.4)


def test_evaluate_corpus_assembles_report():
    gts = page([ann("A", 0, 0, 10, 10), ann("B", 50, 50, 70, 70)])
    dets = [det(0, 0, 10, 10, "A", 0.9)]
    report = evaluate_corpus([(dets, gts)], ["A", "B", "C"])
    assert report.per_class["A"]["ap"] == pytest.approx(1.0, abs=1e-12)
    assert report.per_class["B"]["ap"] == 0.0
    assert report.per_class["C"]["ap"] is None  # no GT: excluded from mAP
    assert report.map_value == pytest.approx(0.5, abs=1e-12)
    d = report.to_dict()
    assert d["confusion"]["columns"] == ["A", "B", "C", "missed"]
    assert len(d["confusion"]["rows"]) == 3


def test_report_and_annotation_files_round_trip(tmp_path):
    gts = page([ann("A", 0, 0, 10, 10)], pid="page_0001")
    ap = tmp_path / "ann.json"
    save_annotations(gts, ap)
    assert load_annotations(ap) == gts
    with pytest.raises(FileNotFoundError):
        load_annotations(tmp_path / "no.json")

    report = evaluate_corpus([([det(0, 0, 10, 10, "A", 0.9)], gts)], ["A"])
    rp = tmp_path / "report.json"
    save_report(report, rp)
    assert load_report(rp) == report.to_dict()
    with pytest.raises(FileNotFoundError):
        load_report(tmp_path / "no_report.json")


def test_annotations_must_fit_page():
    with pytest.raises(ValueError, match="outside"):
        PageAnnotations("p", 50, 50, [ann("A", 40, 40, 60, 50)])
    with pytest.raises(ValueError):
        PageAnnotations("p", 0, 50, [])
