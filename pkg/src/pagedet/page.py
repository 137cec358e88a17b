"""Page raster loading, binarization and margin balancing.

Input formats: 8-bit PNG (grayscale or RGB, converted with the integer luma
formula) and binary PGM (P5). A BinaryPageMap marks ink pixels and remembers
the (origin_x, origin_y) offset of its top-left corner within the source page,
because margin balancing may remove columns from the left or rows from the top.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass
class GrayPage:
    """Row-major 8-bit luminance raster."""

    width: int
    height: int
    pixels: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.width <= 0 or self.height <= 0:
            raise ValueError("page dimensions must be positive")
        if self.pixels.shape != (self.height, self.width):
            raise ValueError(f"pixel buffer shape {self.pixels.shape} does not match "
                             f"{self.height}x{self.width}")

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "GrayPage":
        pixels = np.asarray(pixels, dtype=np.uint8)
        h, w = pixels.shape
        return cls(w, h, pixels)


@dataclass
class BinaryPageMap:
    """Per-pixel foreground mask (True = ink), possibly cropped by margin balancing."""

    width: int
    height: int
    ink: np.ndarray  # (height, width) bool
    origin_x: int = 0
    origin_y: int = 0

    def __post_init__(self):
        self.ink = np.asarray(self.ink, dtype=bool)
        if self.ink.shape != (self.height, self.width):
            raise ValueError("ink mask shape mismatch")


@dataclass
class BinarizeConfig:
    mode: str = "fixed"  # "fixed" | "otsu"
    threshold: int = 128

    def __post_init__(self):
        if self.mode not in ("fixed", "otsu"):
            raise ValueError(f"unknown binarize.mode {self.mode!r}")
        if not 0 <= self.threshold <= 255:
            raise ValueError("binarize.threshold must be in [0, 255]")


def rgb_to_luma(r, g, b):
    """Integer luma: (299R + 587G + 114B) / 1000, truncated."""
    r = np.asarray(r, dtype=np.int64)
    g = np.asarray(g, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    return ((299 * r + 587 * g + 114 * b) // 1000).astype(np.uint8)


def load_page(path) -> GrayPage:
    """Load a PNG or PGM page as 8-bit grayscale."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"page image not found: {path}")
    if path.suffix.lower() == ".pgm":
        return _load_pgm(path)
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:  # Pillow raises several types for corrupt files
        raise ValueError(f"unreadable image {path}: {exc}") from exc
    if img.mode == "L":
        arr = np.asarray(img, dtype=np.uint8)
    elif img.mode in ("RGB", "RGBA", "P"):
        rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
        arr = rgb_to_luma(rgb[:, :, 0], rgb[:, :, 1], rgb[:, :, 2])
    elif img.mode == "1":
        arr = np.asarray(img.convert("L"), dtype=np.uint8)
    else:
        raise ValueError(f"unsupported bit depth / mode {img.mode!r} in {path}")
    return GrayPage.from_array(arr)


def _load_pgm(path: Path) -> GrayPage:
    data = path.read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5)")
    # header = magic, width, height, maxval as whitespace-separated tokens,
    # with optional '#' comment lines
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    w, h, maxval = fields
    if maxval > 255:
        raise ValueError(f"{path}: unsupported bit depth (maxval {maxval})")
    pos += 1  # single whitespace after maxval
    raw = data[pos:pos + w * h]
    if len(raw) != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return GrayPage(w, h, np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy())


def save_pgm(page: GrayPage, path) -> None:
    """Write a binary PGM (P5); load_page round-trips it bit-exactly."""
    header = f"P5\n{page.width} {page.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + page.pixels.tobytes())


def save_png(page: GrayPage, path) -> None:
    Image.fromarray(page.pixels, mode="L").save(Path(path), format="PNG")


def otsu_threshold(page: GrayPage) -> int:
    """Threshold maximizing between-class variance; first maximum on ties."""
    hist = np.bincount(page.pixels.reshape(-1), minlength=256).astype(np.float64)
    total = hist.sum()
    w0 = np.cumsum(hist)
    w1 = total - w0
    cum = np.cumsum(hist * np.arange(256))
    mean_total = cum[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = cum / w0
        mu1 = (mean_total - cum) / w1
    between = w0 * w1 * (mu0 - mu1) ** 2
    between[~np.isfinite(between)] = -1.0
    t = int(np.argmax(between))
    # pixel is foreground iff value < threshold: argmax t means classes split
    # at <= t vs > t, so the strict-less threshold is t + 1
    return t + 1


def binarize(page: GrayPage, cfg: BinarizeConfig | None = None) -> BinaryPageMap:
    """Foreground iff luminance < threshold (fixed or Otsu per config)."""
    cfg = cfg or BinarizeConfig()
    if cfg.mode == "otsu":
        thresh = otsu_threshold(page)
    else:
        thresh = cfg.threshold
    return BinaryPageMap(page.width, page.height, page.pixels < thresh)


def balance_margins(m: BinaryPageMap) -> BinaryPageMap:
    """Equalize the blank margins on each axis by cropping the larger side.

    If the left margin is shorter by d, d columns are removed from the right
    (and symmetrically for the other three sides). A map without any ink is
    returned unchanged. The result records its offset within the input map.
    """
    if not m.ink.any():
        return BinaryPageMap(m.width, m.height, m.ink.copy(), m.origin_x, m.origin_y)
    cols = np.flatnonzero(m.ink.any(axis=0))
    rows = np.flatnonzero(m.ink.any(axis=1))
    left = int(cols[0])
    right = m.width - 1 - int(cols[-1])
    top = int(rows[0])
    bottom = m.height - 1 - int(rows[-1])

    x_lo, x_hi = 0, m.width
    if left < right:
        x_hi -= right - left
    elif right < left:
        x_lo += left - right
    y_lo, y_hi = 0, m.height
    if top < bottom:
        y_hi -= bottom - top
    elif bottom < top:
        y_lo += top - bottom

    ink = m.ink[y_lo:y_hi, x_lo:x_hi].copy()
    return BinaryPageMap(x_hi - x_lo, y_hi - y_lo, ink,
                         m.origin_x + x_lo, m.origin_y + y_lo)
