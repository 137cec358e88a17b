"""Shared helpers for the test suite."""

import os

# serial numeric kernels keep fixed-seed runs bitwise reproducible; this must
# happen before numpy loads
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
             "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
    os.environ[_var] = "1"

import numpy as np

from pagedet.page import BinaryPageMap


def make_map(ink) -> BinaryPageMap:
    """BinaryPageMap from a bool array given row-major as (height, width)."""
    ink = np.asarray(ink, dtype=bool)
    h, w = ink.shape
    return BinaryPageMap(w, h, ink)


def pairwise_max_iou(boxes) -> float:
    """Largest IoU over all unordered box pairs; 0.0 for fewer than two boxes."""
    from pagedet.geometry import iou

    boxes = list(boxes)
    worst = 0.0
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            worst = max(worst, iou(boxes[i], boxes[j]))
    return worst


_criterion_lines: list[str] = []


def record_criterion(line: str) -> None:
    """Queue an acceptance-criterion verdict for the end-of-run summary."""
    _criterion_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in _criterion_lines:
            terminalreporter.line(line)
