"""Synthetic labeled page generator.

Pages are laid out as 1-3 columns of textured blocks. The textures are
designed so the grid division recovers every block exactly: each block has
full-width ink rows at its top and bottom (so no column divider can thread
through it and its tight bounding box spans the whole block), interior blank
runs stay well under the blank-row threshold, vertical gaps between blocks
fall in [min_gap, max_gap] (wide enough to split on, narrow enough that
stacked blocks are graph neighbors), and column gutters are centered on the
exact divider positions of the page width. Block heights are scaled to fill
the column, which keeps the page's mean block height far above the adaptive
re-division trigger.

Three generation modes:
  weighted     - classes drawn from per-class weights (default: the train
                 counts of the reference corpus), mixed column counts.
  grammar      - single column; a fixed class sequence in which each class
                 appears at most once (dropped with probability
                 1 - presence_prob), so appearance predicts adjacency. Used
                 for embedding pretraining.
  context-pair - single column of [context block, caption-look] units. The
                 caption-look texture is identical everywhere; its label is
                 Figure Caption exactly when its unit context is a figure
                 block, else Body Text. Units are spaced beyond the neighbor
                 radius so the graph links a caption only to its own context.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import BBox
from .metrics import AnnotationBox, PageAnnotations, save_annotations
from .page import GrayPage, save_png
from .postprocess import TokenEntry, TokenSidecar, save_tokens

TABLE1_TRAIN_COUNTS = {
    "Body Text": 6578, "Equation": 1115, "Figure": 1384, "Figure Caption": 1285,
    "Other": 359, "Page Footer": 907, "Page Header": 2765, "Reference Text": 496,
    "Section Header": 3227, "Table": 767, "Table Caption": 763,
}

GRAMMAR_SEQUENCE = (
    "Page Header", "Section Header", "Body Text", "Equation", "Other",
    "Figure", "Figure Caption", "Table", "Table Caption", "Reference Text",
    "Page Footer",
)

CONTEXT_PAIR_CLASSES = ("Body Text", "Figure", "Figure Caption")

CLASS_TEXTURE = {
    "Body Text": "body", "Equation": "equation", "Figure": "figure",
    "Figure Caption": "caption", "Other": "other", "Page Footer": "footer",
    "Page Header": "header", "Reference Text": "reference",
    "Section Header": "section", "Table": "table", "Table Caption": "hollow_caption",
}

# natural (pre-scaling) block height ranges per class
HEIGHT_RANGES = {
    "Body Text": (60, 110), "Equation": (36, 60), "Figure": (90, 160),
    "Figure Caption": (20, 32), "Other": (40, 70), "Page Footer": (16, 24),
    "Page Header": (16, 24), "Reference Text": (50, 90),
    "Section Header": (20, 30), "Table": (80, 140), "Table Caption": (20, 32),
}

MIN_BLOCK_HEIGHT = 12
FIG_FIRST_TOKENS = ("Figure", "Fig.", "FIGURE", "Fig")
TAB_FIRST_TOKENS = ("Table", "Tab.", "Tbl.", "TABLE", "TBL")
BODY_FIRST_TOKENS = ("The", "We", "In", "Our", "Results")
FILLER_TOKENS = ("analysis", "of", "synthetic", "panel", "data", "3.", "region")


@dataclass
class LayoutSpec:
    page_width: int = 640
    page_height: int = 880
    margin: int = 36
    columns: object = "mixed"  # 1 | 2 | 3 | "mixed"
    mode: str = "weighted"  # "weighted" | "grammar" | "context-pair"
    class_weights: dict = field(default_factory=lambda: dict(TABLE1_TRAIN_COUNTS))
    min_gap: int = 16
    max_gap: int = 19
    caption_token_prob: float = 0.9
    presence_prob: float = 0.95

    def __post_init__(self):
        if self.mode not in ("weighted", "grammar", "context-pair"):
            raise ValueError(f"unknown synth.mode {self.mode!r}")
        if self.columns not in (1, 2, 3, "mixed"):
            raise ValueError("columns must be 1, 2, 3 or 'mixed'")
        if not self.class_weights or all(w <= 0 for w in self.class_weights.values()):
            raise ValueError("class weights must contain a positive entry")
        if any(w < 0 for w in self.class_weights.values()):
            raise ValueError("class weights must be nonnegative")
        if not self.min_gap <= self.max_gap:
            raise ValueError("min_gap must be <= max_gap")
        if self.page_height - 2 * self.margin < 6 * (MIN_BLOCK_HEIGHT + self.max_gap):
            raise ValueError("page too small for the requested layout")
        if (self.page_width - 2 * self.margin) // 3 < 48:
            raise ValueError("page too narrow for three columns")


@dataclass
class PageBundle:
    page_id: str
    page: GrayPage
    annots: PageAnnotations
    tokens: TokenSidecar
    textures: list  # texture name per annotation, the generator's placement log


# --- textures ----------------------------------------------------------------
# every texture sets full-width rows at the top and bottom two pixels and
# keeps interior blank runs short; see the module docstring for why.

def _base(h: int, w: int) -> np.ndarray:
    mask = np.zeros((h, w), dtype=bool)
    mask[0:2, :] = True
    mask[h - 2:h, :] = True
    return mask


def _tex_body(rng, h, w):
    mask = _base(h, w)
    for y in range(4, h - 6, 7):
        x = 3
        while x < w - 6:
            ww = int(rng.integers(10, 36))
            mask[y:y + 3, x:min(x + ww, w - 3)] = True
            x += ww + int(rng.integers(4, 9))
    return mask


def _tex_reference(rng, h, w):
    mask = _base(h, w)
    mask[:, 0:3] = True
    for y in range(4, h - 6, 5):
        right = w - 3 - int(rng.integers(0, min(30, w // 4)))
        mask[y:y + 3, 6:right] = True
    return mask


def _tex_section(rng, h, w):
    mask = _base(h, w)
    width = 3 + int(w * rng.uniform(0.45, 0.7))
    mask[3:h - 3, 3:min(width, w - 3)] = True
    return mask


def _tex_equation(rng, h, w):
    mask = _base(h, w)
    mid = h // 2
    mask[mid:mid + 2, w // 4:(3 * w) // 4] = True
    for y in range(5, h - 7, 9):
        for _ in range(int(rng.integers(2, 5))):
            x = int(rng.integers(4, max(5, w - 12)))
            mask[y:y + 3, x:x + int(rng.integers(4, 8))] = True
    return mask


def _tex_figure(rng, h, w):
    mask = _base(h, w)
    mask[:, 0:2] = True
    mask[:, w - 2:w] = True
    cell = int(rng.integers(4, 7))
    yy, xx = np.indices((h - 4, w - 4))
    mask[2:h - 2, 2:w - 2] |= ((yy // cell + xx // cell) % 2 == 0)
    return mask


def _caption_rows(rng, mask, h, w, first_x):
    for i, y in enumerate(range(3, h - 4, 5)):
        x = first_x if i == 0 else 3
        while x < w - 6:
            ww = int(rng.integers(6, 18))
            mask[y:y + 2, x:min(x + ww, w - 3)] = True
            x += ww + int(rng.integers(3, 7))


def _tex_caption(rng, h, w):
    mask = _base(h, w)
    sq = min(8, h - 6)
    mask[3:3 + sq, 3:3 + sq] = True
    _caption_rows(rng, mask, h, w, 3 + sq + 3)
    return mask


def _tex_hollow_caption(rng, h, w):
    mask = _base(h, w)
    sq = min(8, h - 6)
    mask[3:3 + sq, 3:3 + sq] = True
    if sq > 4:
        mask[5:1 + sq, 5:1 + sq] = False
    _caption_rows(rng, mask, h, w, 3 + sq + 3)
    return mask


def _tex_other(rng, h, w):
    mask = _base(h, w)
    yy, xx = np.indices((h - 4, w - 6))
    mask[2:h - 2, 3:w - 3] |= ((yy + xx) % 10 < 3)
    return mask


def _tex_header(rng, h, w):
    mask = _base(h, w)
    if h >= 10:
        mask[h - 6:h - 4, :] = True
    for y in range(4, h - 7, 8):
        for x in range(4, w - 14, 20):
            mask[y:y + 2, x:x + 10] = True
    return mask


def _tex_footer(rng, h, w):
    mask = _base(h, w)
    if h >= 10:
        mask[4:6, :] = True
    for y in range(8, h - 5, 8):
        for x in range(6, w - 9, 24):
            mask[y:y + 3, x:x + 3] = True
    return mask


def _tex_table(rng, h, w):
    mask = _base(h, w)
    mask[:, 0:2] = True
    mask[:, w - 2:w] = True
    x = 2 + int(rng.integers(28, 52))
    while x < w - 4:
        mask[:, x:x + 1] = True
        x += int(rng.integers(28, 52))
    for y in range(12, h - 4, int(rng.integers(12, 17))):
        mask[y:y + 1, :] = True
    return mask


TEXTURES = {
    "body": _tex_body, "reference": _tex_reference, "section": _tex_section,
    "equation": _tex_equation, "figure": _tex_figure, "caption": _tex_caption,
    "hollow_caption": _tex_hollow_caption, "other": _tex_other,
    "header": _tex_header, "footer": _tex_footer, "table": _tex_table,
}


# --- layout -------------------------------------------------------------------

def column_ranges(page_width: int, margin: int, n_cols: int) -> list[tuple[int, int]]:
    """Column x-ranges whose gutters are centered on the exact j*w/c dividers."""
    if n_cols == 1:
        return [(margin, page_width - margin)]
    half_gutter = 8
    cuts = [(j * page_width) // n_cols for j in range(1, n_cols)]
    edges = [margin]
    for c in cuts:
        edges.extend([c - half_gutter, c + half_gutter])
    edges.append(page_width - margin)
    return [(edges[2 * i], edges[2 * i + 1]) for i in range(n_cols)]


def _scale_heights(natural: list[int], budget: int) -> list[int]:
    """Scale block heights to consume the budget exactly, respecting a floor."""
    n = len(natural)
    if budget < n * MIN_BLOCK_HEIGHT:
        raise ValueError("column budget too small for the planned block count")
    f = budget / sum(natural)
    heights = [max(MIN_BLOCK_HEIGHT, int(h * f)) for h in natural]
    while sum(heights) > budget:  # the floor clamp can overshoot; shave the tallest
        k = heights.index(max(heights))
        heights[k] = max(MIN_BLOCK_HEIGHT, heights[k] - (sum(heights) - budget))
    order = sorted(range(n), key=lambda k: -natural[k])
    i = 0
    while sum(heights) < budget:
        heights[order[i % n]] += 1
        i += 1
    return heights


def _stack_column(rng, classes: list[str], x0: int, x1: int, y_top: int,
                  budget: int, min_gap: int, max_gap: int, fill: bool = True):
    """Place blocks top-down; returns (class, BBox) rows."""
    n = len(classes)
    gaps = [int(rng.integers(min_gap, max_gap + 1)) for _ in range(n - 1)]
    natural = [int(rng.integers(*HEIGHT_RANGES[c])) for c in classes]
    content = budget - sum(gaps)
    heights = _scale_heights(natural, content) if fill else natural
    rows = []
    y = y_top
    for i, (cls, h) in enumerate(zip(classes, heights)):
        rows.append((cls, BBox(x0, y, x1, y + h)))
        y += h + (gaps[i] if i < n - 1 else 0)
    return rows


_COLUMN_BLOCKS = {1: (8, 10), 2: (7, 9), 3: (6, 8)}


def _plan_weighted(spec: LayoutSpec, rng) -> list[tuple[str, BBox, str]]:
    names = sorted(spec.class_weights)
    weights = np.array([spec.class_weights[n] for n in names], dtype=np.float64)
    probs = weights / weights.sum()
    n_cols = spec.columns if spec.columns != "mixed" else \
        int(rng.choice([1, 2, 3], p=[0.35, 0.4, 0.25]))
    lo, hi = _COLUMN_BLOCKS[n_cols]
    budget = spec.page_height - 2 * spec.margin
    blocks = []
    for x0, x1 in column_ranges(spec.page_width, spec.margin, n_cols):
        n = int(rng.integers(lo, hi + 1))
        classes = [names[int(k)] for k in rng.choice(len(names), size=n, p=probs)]
        for cls, box in _stack_column(rng, classes, x0, x1, spec.margin,
                                      budget, spec.min_gap, spec.max_gap):
            blocks.append((cls, box, CLASS_TEXTURE[cls]))
    return blocks


def _plan_grammar(spec: LayoutSpec, rng) -> list[tuple[str, BBox, str]]:
    classes = [c for c in GRAMMAR_SEQUENCE if rng.random() < spec.presence_prob]
    if len(classes) < 2:
        classes = list(GRAMMAR_SEQUENCE)
    (x0, x1), = column_ranges(spec.page_width, spec.margin, 1)
    budget = spec.page_height - 2 * spec.margin
    return [(cls, box, CLASS_TEXTURE[cls])
            for cls, box in _stack_column(rng, classes, x0, x1, spec.margin,
                                          budget, spec.min_gap, spec.max_gap)]


def _plan_context_pair(spec: LayoutSpec, rng) -> list[tuple[str, BBox, str]]:
    """Units of (context block, caption-look); spacing controls the label."""
    (x0, x1), = column_ranges(spec.page_width, spec.margin, 1)
    y = spec.margin
    limit = spec.page_height - spec.margin
    blocks = []
    while True:
        ctx_h = int(rng.integers(80, 121))
        cap_h = int(rng.integers(20, 31))
        gap = int(rng.integers(spec.min_gap, spec.max_gap + 1))
        unit_h = ctx_h + gap + cap_h
        if y + unit_h > limit:
            break
        figure_context = bool(rng.random() < 0.5)
        if figure_context:
            blocks.append(("Figure", BBox(x0, y, x1, y + ctx_h), "figure"))
            cap_cls = "Figure Caption"
        else:
            blocks.append(("Body Text", BBox(x0, y, x1, y + ctx_h), "body"))
            cap_cls = "Body Text"
        cap_y = y + ctx_h + gap
        blocks.append((cap_cls, BBox(x0, cap_y, x1, cap_y + cap_h), "caption"))
        y = cap_y + cap_h + int(rng.integers(24, 31))
    return blocks


def _block_tokens(cls: str, texture: str, spec: LayoutSpec, rng) -> list[str]:
    def words(n):
        return [FILLER_TOKENS[int(k)] for k in rng.integers(0, len(FILLER_TOKENS), n)]

    if cls == "Figure Caption":
        first = FIG_FIRST_TOKENS[int(rng.integers(len(FIG_FIRST_TOKENS)))] \
            if rng.random() < spec.caption_token_prob else BODY_FIRST_TOKENS[0]
        return [first] + words(int(rng.integers(2, 5)))
    if cls == "Table Caption":
        first = TAB_FIRST_TOKENS[int(rng.integers(len(TAB_FIRST_TOKENS)))] \
            if rng.random() < spec.caption_token_prob else BODY_FIRST_TOKENS[0]
        return [first] + words(int(rng.integers(2, 5)))
    if cls == "Body Text":
        first = BODY_FIRST_TOKENS[int(rng.integers(len(BODY_FIRST_TOKENS)))]
        return [first] + words(int(rng.integers(3, 7)))
    return []


def generate_page(spec: LayoutSpec, seed, page_id: str = "page") -> PageBundle:
    """Render one labeled page; identical (spec, seed) gives identical output."""
    entropy = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    rng = np.random.default_rng(np.random.SeedSequence(entropy))
    if spec.mode == "weighted":
        blocks = _plan_weighted(spec, rng)
    elif spec.mode == "grammar":
        blocks = _plan_grammar(spec, rng)
    else:
        blocks = _plan_context_pair(spec, rng)
    canvas = np.full((spec.page_height, spec.page_width), 255, dtype=np.uint8)
    annotations = []
    token_entries = []
    textures = []
    for cls, box, texture in blocks:
        mask = TEXTURES[texture](rng, box.height, box.width)
        region = canvas[box.y0:box.y1, box.x0:box.x1]
        region[mask] = 0
        annotations.append(AnnotationBox(cls, box))
        token_entries.append(TokenEntry(box, _block_tokens(cls, texture, spec, rng)))
        textures.append(texture)
    page = GrayPage(spec.page_width, spec.page_height, canvas)
    annots = PageAnnotations(page_id, spec.page_width, spec.page_height, annotations)
    return PageBundle(page_id, page, annots, TokenSidecar(token_entries), textures)


def generate_pages(spec: LayoutSpec, n_pages: int, seed) -> list[PageBundle]:
    """In-memory corpus; page i uses the derived seed (seed..., i)."""
    base = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    return [generate_page(spec, base + (i,), f"page_{i:04d}")
            for i in range(n_pages)]


def generate_corpus(spec: LayoutSpec, n_pages: int, seed, out_dir) -> dict:
    """Write images, per-page annotations and tokens, plus a manifest."""
    out = Path(out_dir)
    for sub in ("images", "annotations", "tokens"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    base = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    manifest = {"n_pages": n_pages, "seed": list(base), "mode": spec.mode, "pages": []}
    for i in range(n_pages):
        bundle = generate_page(spec, base + (i,), f"page_{i:04d}")
        image_rel = f"images/{bundle.page_id}.png"
        annot_rel = f"annotations/{bundle.page_id}.json"
        tokens_rel = f"tokens/{bundle.page_id}.json"
        save_png(bundle.page, out / image_rel)
        save_annotations(bundle.annots, out / annot_rel)
        save_tokens(bundle.tokens, out / tokens_rel)
        manifest["pages"].append({"id": bundle.page_id, "image": image_rel,
                                  "annotations": annot_rel, "tokens": tokens_rel,
                                  "seed": list(base) + [i],
                                  "textures": bundle.textures})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest


def load_corpus(corpus_dir) -> list[PageBundle]:
    """Read a generated corpus back through its manifest."""
    from .page import load_page
    from .metrics import load_annotations
    from .postprocess import load_tokens

    root = Path(corpus_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"corpus manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    bundles = []
    for entry in manifest["pages"]:
        page = load_page(root / entry["image"])
        annots = load_annotations(root / entry["annotations"])
        tokens = load_tokens(root / entry["tokens"])
        bundles.append(PageBundle(entry["id"], page, annots, tokens,
                                  list(entry.get("textures", []))))
    return bundles


def default_spec() -> LayoutSpec:
    return LayoutSpec()


def pretrain_spec() -> LayoutSpec:
    return LayoutSpec(columns=1, mode="grammar")


def context_pair_spec() -> LayoutSpec:
    return LayoutSpec(columns=1, mode="context-pair")
