"""Detection postprocessing: caption reclassification and figure/table merging.

Caption rules inspect the first OCR token of Body Text detections: a
normalized token containing "fig" becomes Figure Caption, an exact "table",
"tab" or "tbl" becomes Table Caption. Merging repeatedly unions pairs of
same-class detections (Figure, then Table) when the union stays conflict-free;
tables merge more aggressively, absorbing anything except Body Text and the
two caption classes. A merged detection carries the highest member score.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path

from .classifier import Detection
from .geometry import BBox, iou, reading_order_key, union_bbox

TABLE_WORDS = frozenset({"table", "tab", "tbl"})
TABLE_BLOCKING = frozenset({"Body Text", "Figure Caption", "Table Caption"})
_TRAILING = set(string.punctuation) | set(string.digits)


@dataclass
class TokenEntry:
    bbox: BBox
    tokens: list[str]


@dataclass
class TokenSidecar:
    """Per-region OCR tokens, looked up by exact bounding box."""

    entries: list[TokenEntry] = field(default_factory=list)

    def tokens_for(self, bbox: BBox) -> list[str] | None:
        for e in self.entries:
            if e.bbox == bbox:
                return e.tokens
        return None


def save_tokens(sidecar: TokenSidecar, path) -> None:
    doc = [{"bbox": e.bbox.to_list(), "tokens": list(e.tokens)} for e in sidecar.entries]
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_tokens(path) -> TokenSidecar:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"tokens file not found: {path}")
    doc = json.loads(path.read_text())
    return TokenSidecar([TokenEntry(BBox.from_list(e["bbox"]), [str(t) for t in e["tokens"]])
                         for e in doc])


def normalize_token(token: str) -> str:
    """Lowercase and strip trailing punctuation and digits ("Fig." -> "fig")."""
    t = token.lower()
    while t and t[-1] in _TRAILING:
        t = t[:-1]
    return t


def reclassify_captions(dets: list[Detection], tokens: TokenSidecar) -> list[Detection]:
    """Flip Body Text detections whose first token names a figure or table.

    Only the class label may change; boxes and scores are preserved. Regions
    without a token entry (or with an empty token list) are left alone.
    """
    out = []
    for d in dets:
        cls = d.cls
        if d.cls == "Body Text":
            toks = tokens.tokens_for(d.bbox)
            if toks:
                first = normalize_token(toks[0])
                if "fig" in first:
                    cls = "Figure Caption"
                elif first in TABLE_WORDS:
                    cls = "Table Caption"
        out.append(Detection(d.bbox, cls, d.score))
    return out


def _merge_class(dets: list[Detection], cls: str,
                 blocking: frozenset | None) -> list[Detection]:
    """Fixpoint pair merging for one class.

    blocking None: the union must not overlap any other detection at all.
    blocking set: the union may overlap non-blocking detections, which are
    dropped when the merge happens.
    """
    dets = sorted(dets, key=lambda d: reading_order_key(d.bbox))
    while True:
        idxs = [i for i, d in enumerate(dets) if d.cls == cls]
        merged = False
        for a in range(len(idxs)):
            for b in range(a + 1, len(idxs)):
                i, j = idxs[a], idxs[b]
                union = union_bbox(dets[i].bbox, dets[j].bbox)
                others = [k for k in range(len(dets)) if k not in (i, j)]
                overlapped = [k for k in others if iou(union, dets[k].bbox) > 0]
                if blocking is None:
                    if overlapped:
                        continue
                    dropped = []
                else:
                    if any(dets[k].cls in blocking for k in overlapped):
                        continue
                    dropped = overlapped
                score = max(dets[i].score, dets[j].score)
                remove = set(dropped) | {i, j}
                dets = [d for k, d in enumerate(dets) if k not in remove]
                dets.append(Detection(union, cls, score))
                dets.sort(key=lambda d: reading_order_key(d.bbox))
                merged = True
                break
            if merged:
                break
        if not merged:
            return dets


def merge_figures(dets: list[Detection]) -> list[Detection]:
    """Union Figure pairs whose merged box overlaps nothing else."""
    return _merge_class(dets, "Figure", None)


def merge_tables(dets: list[Detection]) -> list[Detection]:
    """Union Table pairs; non-blocking overlapped detections are dropped."""
    return _merge_class(dets, "Table", TABLE_BLOCKING)


def postprocess_detections(dets: list[Detection],
                           tokens: TokenSidecar | None = None) -> list[Detection]:
    """Caption rules first (when tokens exist), then figure and table merging."""
    if tokens is not None:
        dets = reclassify_captions(dets, tokens)
    dets = merge_figures(dets)
    return merge_tables(dets)
