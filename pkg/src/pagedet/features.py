"""Region feature extraction: crop-and-warp plus a small trainable conv stack.

Each proposal is cropped from the grayscale page, bilinearly warped to a
fixed square, and pushed through two stride-2 valid convolutions with ReLU.
The 16-channel output map is used two ways: flattened as the embedding-net
input, and average-pooled onto a 4x4 grid to form the 256-d value vector
consumed by the attention heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .geometry import BBox
from .page import GrayPage


@dataclass
class FeatureConfig:
    warp_size: int = 64
    conv_channels: tuple = (8, 16)
    kernel: int = 3
    stride: int = 2
    pool_grid: int = 4

    def __post_init__(self):
        if self.warp_size < 16:
            raise ValueError("features.warp_size must be >= 16")
        if len(self.conv_channels) != 2 or any(c <= 0 for c in self.conv_channels):
            raise ValueError("features.conv_channels must be two positive counts")
        if self.kernel <= 0 or self.stride <= 0 or self.pool_grid <= 0:
            raise ValueError("feature extents must be positive")

    @property
    def map_side(self) -> int:
        """Spatial side of the final conv map for a warp_size input."""
        side = self.warp_size
        for _ in self.conv_channels:
            side = (side - self.kernel) // self.stride + 1
        return side

    @property
    def value_dim(self) -> int:
        return self.conv_channels[-1] * self.pool_grid * self.pool_grid

    @property
    def flat_dim(self) -> int:
        return self.conv_channels[-1] * self.map_side * self.map_side


def crop_warp(page: GrayPage, box: BBox, size: int = 64) -> np.ndarray:
    """Bilinear warp of the boxed region to size x size, values scaled to [0,1].

    Sample centers follow the half-pixel convention: output pixel j reads
    source coordinate (j + 0.5) * (src / size) - 0.5, clamped to the region.
    A region already at size x size is copied unchanged (up to the /255).
    """
    if not (0 <= box.x0 and box.x1 <= page.width and 0 <= box.y0 and box.y1 <= page.height):
        raise ValueError(f"box {box} not within page {page.width}x{page.height}")
    region = page.pixels[box.y0:box.y1, box.x0:box.x1].astype(np.float64)
    h, w = region.shape

    def axis_taps(src: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        coords = np.clip((np.arange(size) + 0.5) * (src / size) - 0.5, 0, src - 1)
        lo = np.floor(coords).astype(np.intp)
        hi = np.minimum(lo + 1, src - 1)
        return lo, hi, coords - lo

    ry0, ry1, ty = axis_taps(h)
    rx0, rx1, tx = axis_taps(w)
    top = region[ry0][:, rx0] * (1 - tx) + region[ry0][:, rx1] * tx
    bot = region[ry1][:, rx0] * (1 - tx) + region[ry1][:, rx1] * tx
    warped = top * (1 - ty)[:, None] + bot * ty[:, None]
    return warped / 255.0


class Backbone:
    """Two stride-2 valid convolutions with ReLU, trainable end to end."""

    def __init__(self, cfg: FeatureConfig | None = None,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg or FeatureConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        c1, c2 = self.cfg.conv_channels
        k = self.cfg.kernel
        self.conv1_w = nn.Tensor(rng.normal(0.0, np.sqrt(2.0 / (1 * k * k)),
                                            (c1, 1, k, k)), requires_grad=True)
        self.conv1_b = nn.Tensor(np.zeros(c1), requires_grad=True)
        self.conv2_w = nn.Tensor(rng.normal(0.0, np.sqrt(2.0 / (c1 * k * k)),
                                            (c2, c1, k, k)), requires_grad=True)
        self.conv2_b = nn.Tensor(np.zeros(c2), requires_grad=True)

    def params(self) -> list[nn.Tensor]:
        return [self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b]

    def tensors(self) -> dict:
        return {"backbone.conv1.w": self.conv1_w, "backbone.conv1.b": self.conv1_b,
                "backbone.conv2.w": self.conv2_w, "backbone.conv2.b": self.conv2_b}

    def load_tensors(self, blob: dict) -> None:
        for name, t in self.tensors().items():
            arr = blob[name]
            if arr.shape != t.data.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != {t.data.shape}")
            t.data[...] = arr

    def extract(self, patches) -> nn.Tensor:
        """Conv maps for a (batch, warp, warp) stack of patches."""
        arr = patches.data if isinstance(patches, nn.Tensor) else np.asarray(patches, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[1] != self.cfg.warp_size or arr.shape[2] != self.cfg.warp_size:
            raise ValueError(f"expected (batch, {self.cfg.warp_size}, {self.cfg.warp_size}) patches")
        x = patches if isinstance(patches, nn.Tensor) else nn.Tensor(arr)
        x = nn.reshape(x, (arr.shape[0], 1, arr.shape[1], arr.shape[2]))
        x = nn.relu(nn.conv2d(x, self.conv1_w, self.conv1_b, stride=self.cfg.stride))
        x = nn.relu(nn.conv2d(x, self.conv2_w, self.conv2_b, stride=self.cfg.stride))
        return x


def value_vector(conv_map: nn.Tensor, pool_grid: int = 4) -> nn.Tensor:
    """Pool a (batch, c, h, w) map onto pool_grid^2 cells and flatten per item."""
    pooled = nn.adaptive_avg_pool2d(conv_map, pool_grid, pool_grid)
    b, c, gh, gw = pooled.data.shape
    return nn.reshape(pooled, (b, c * gh * gw))


def flatten(conv_map: nn.Tensor) -> nn.Tensor:
    """Flatten a (batch, c, h, w) map to (batch, c*h*w)."""
    b = conv_map.data.shape[0]
    return nn.reshape(conv_map, (b, int(np.prod(conv_map.data.shape[1:]))))
