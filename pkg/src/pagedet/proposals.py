"""Grid region proposals.

A margin-balanced binary page map is cut into horizontal bands at blank-row
runs of height >= R, each band is split into 1-3 columns wherever equally
spaced vertical divider bands are free of ink, each column is re-split into
rows with the same blank-run rule, and every leaf cell is tightened to the
bounding box of its 8-connected ink components (small components filtered).
If the resulting leaf rows are short on average, R is scaled up and the whole
division re-runs. The output proposals are pairwise disjoint by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import BBox, reading_order_key
from .page import BinaryPageMap

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass
class GridConfig:
    """Knobs for the grid division.

    R: minimum blank-row run height, pixels.
    divider_band_width: width a column divider must span blank, pixels.
    min_cc_area: connected components below this area are filtered, pixels^2.
    max_redivide_iters / redivide_factor / avg_height_multiplier: the
    re-division rule; when the mean leaf-row height falls below
    avg_height_multiplier * R, R is multiplied by redivide_factor and the
    division re-runs, at most max_redivide_iters times.
    """

    R: int = 15
    divider_band_width: int = 5
    min_cc_area: int = 9
    max_redivide_iters: int = 3
    redivide_factor: int = 2
    avg_height_multiplier: int = 3

    def __post_init__(self):
        for name in ("R", "divider_band_width", "min_cc_area",
                     "max_redivide_iters", "redivide_factor",
                     "avg_height_multiplier"):
            if getattr(self, name) <= 0:
                raise ValueError(f"grid.{name} must be positive")
        if self.redivide_factor < 2:
            raise ValueError("grid.redivide_factor must be >= 2")


@dataclass
class ProposalSet:
    """Disjoint region proposals in reading order (top-to-bottom, left-to-right)."""

    page_width: int
    page_height: int
    proposals: list[BBox] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.proposals)

    def __iter__(self):
        return iter(self.proposals)

    def __getitem__(self, i: int) -> BBox:
        return self.proposals[i]


@dataclass
class GridTrace:
    """Diagnostics from one propose() call."""

    effective_R: int
    redivisions: int
    leaf_count: int
    mean_leaf_height: float


def _blank_run_bounds(blank: np.ndarray, min_len: int) -> list[tuple[int, int]]:
    """Maximal runs of True in a 1-D mask with length >= min_len, as half-open spans."""
    n = len(blank)
    if n == 0:
        return []
    padded = np.concatenate(([False], blank, [False]))
    diff = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    return [(int(s), int(e)) for s, e in zip(starts, ends) if e - s >= min_len]


def find_blank_row_runs(m: BinaryPageMap, R: int) -> list[tuple[int, int]]:
    """Maximal all-background row runs of height >= R, sorted by y."""
    blank = ~m.ink.any(axis=1)
    return _blank_run_bounds(blank, R)


def _ink_bands(blank: np.ndarray, R: int, lo: int, hi: int) -> list[tuple[int, int]]:
    """Complement of the qualifying blank runs within [lo, hi)."""
    bands = []
    cursor = lo
    for s, e in _blank_run_bounds(blank[lo:hi], R):
        s, e = s + lo, e + lo
        if s > cursor:
            bands.append((cursor, s))
        cursor = e
    if cursor < hi:
        bands.append((cursor, hi))
    return bands


def split_columns(m: BinaryPageMap, band: BBox, cfg: GridConfig) -> list[BBox]:
    """Split a horizontal band into the maximum number of columns (1-3).

    A split into c columns is valid iff each of the c-1 vertical divider bands
    (divider_band_width wide, centered at x0 + j*w/c) contains no ink within
    the band's y-range. c=1 is always valid.
    """
    w = band.width
    half = cfg.divider_band_width // 2
    region = m.ink[band.y0:band.y1, band.x0:band.x1]
    for c in (3, 2):
        valid = True
        for j in range(1, c):
            cx = (j * w) // c
            b0 = max(0, cx - half)
            b1 = min(w, b0 + cfg.divider_band_width)
            if region[:, b0:b1].any():
                valid = False
                break
        if valid:
            edges = [band.x0 + (j * w) // c for j in range(c + 1)]
            return [BBox(edges[i], band.y0, edges[i + 1], band.y1)
                    for i in range(c)]
    return [band]


def refine_cell(m: BinaryPageMap, cell: BBox, min_cc_area: int) -> BBox | None:
    """Tight bbox of the cell's 8-connected ink components with area >= min_cc_area.

    Returns None when no component survives (blank or speckle-only cell).
    """
    region = m.ink[cell.y0:cell.y1, cell.x0:cell.x1]
    if not region.any():
        return None
    labels, count = ndimage.label(region, structure=EIGHT_CONNECTED)
    areas = np.bincount(labels.reshape(-1), minlength=count + 1)
    keep = np.flatnonzero(areas[1:] >= min_cc_area) + 1
    if keep.size == 0:
        return None
    mask = np.isin(labels, keep)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return BBox(cell.x0 + int(cols[0]), cell.y0 + int(rows[0]),
                cell.x0 + int(cols[-1]) + 1, cell.y0 + int(rows[-1]) + 1)


def _leaf_cells(m: BinaryPageMap, R: int, cfg: GridConfig) -> list[BBox]:
    """One full division pass: row bands, column splits, inner row re-splits."""
    page_blank = ~m.ink.any(axis=1)
    leaves = []
    for y0, y1 in _ink_bands(page_blank, R, 0, m.height):
        band = BBox(0, y0, m.width, y1)
        for col in split_columns(m, band, cfg):
            col_blank = ~m.ink[:, col.x0:col.x1].any(axis=1)
            for yy0, yy1 in _ink_bands(col_blank, R, col.y0, col.y1):
                leaves.append(BBox(col.x0, yy0, col.x1, yy1))
    return leaves


def propose_info(m: BinaryPageMap, cfg: GridConfig | None = None) -> tuple[ProposalSet, GridTrace]:
    """propose() plus a trace of the re-division loop."""
    cfg = cfg or GridConfig()
    R = cfg.R
    redivisions = 0
    leaves = _leaf_cells(m, R, cfg)
    while leaves and redivisions < cfg.max_redivide_iters:
        mean_h = sum(c.height for c in leaves) / len(leaves)
        if mean_h >= cfg.avg_height_multiplier * R:
            break
        R *= cfg.redivide_factor
        redivisions += 1
        leaves = _leaf_cells(m, R, cfg)
    boxes = []
    for cell in leaves:
        refined = refine_cell(m, cell, cfg.min_cc_area)
        if refined is not None:
            boxes.append(refined)
    boxes.sort(key=reading_order_key)
    mean_h = sum(c.height for c in leaves) / len(leaves) if leaves else 0.0
    return (ProposalSet(m.width, m.height, boxes),
            GridTrace(R, redivisions, len(leaves), mean_h))


def propose(m: BinaryPageMap, cfg: GridConfig | None = None) -> ProposalSet:
    """Divide a margin-balanced binary map into disjoint region proposals."""
    props, _ = propose_info(m, cfg)
    return props


def propose_page(page, grid_cfg: GridConfig | None = None, bin_cfg=None) -> ProposalSet:
    """Full pipeline for a raw page: binarize, balance margins, propose.

    Proposals are translated back into the original page's coordinates.
    """
    from .page import balance_margins, binarize

    m = balance_margins(binarize(page, bin_cfg))
    props = propose(m, grid_cfg)
    shifted = [b.translate(m.origin_x, m.origin_y) for b in props]
    return ProposalSet(page.width, page.height, shifted)


def save_proposals(props: ProposalSet, path, neighbors: list[list[int]] | None = None) -> None:
    doc = {"page": [props.page_width, props.page_height],
           "proposals": [b.to_list() for b in props]}
    if neighbors is not None:
        doc["neighbors"] = neighbors
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_proposals(path) -> tuple[ProposalSet, list[list[int]] | None]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"proposals file not found: {path}")
    doc = json.loads(path.read_text())
    w, h = doc["page"]
    boxes = [BBox.from_list(b) for b in doc["proposals"]]
    return ProposalSet(int(w), int(h), boxes), doc.get("neighbors")
