"""Context-attentive region classification.

Each proposal is classified from two inputs: its own pooled value vector and
a context vector computed by multi-head attention over its neighbors, where
queries and keys are the pretrained region embeddings. A three-layer head
with dropout and a terminal softmax produces the class distribution. This
module also owns ground-truth assignment, end-to-end training, page-level
detection and the checkpoint container.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from . import nn
from .embeddings import D_K, EmbeddingNet, embed, region_patches
from .features import Backbone, FeatureConfig, value_vector
from .geometry import BBox, intersection_area, reading_order_key
from .neighbors import NeighborGraph, build_graph
from .page import BinarizeConfig, GrayPage
from .proposals import GridConfig, ProposalSet, propose_page

if TYPE_CHECKING:
    from .metrics import PageAnnotations

DEFAULT_CLASSES = (
    "Body Text", "Equation", "Figure", "Figure Caption", "Other",
    "Page Footer", "Page Header", "Reference Text", "Section Header",
    "Table", "Table Caption",
)


class AttentionParams:
    """Per-head query/key projections; values are shared across heads."""

    def __init__(self, n_heads: int = 3, head_dim: int = 64,
                 rng: np.random.Generator | None = None):
        if n_heads < 1 or head_dim < 1:
            raise ValueError("n_heads and head_dim must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_heads = n_heads
        self.head_dim = head_dim
        std = np.sqrt(1.0 / D_K)
        self.w_q = [nn.Tensor(rng.normal(0.0, std, (D_K, head_dim)), requires_grad=True)
                    for _ in range(n_heads)]
        self.w_k = [nn.Tensor(rng.normal(0.0, std, (D_K, head_dim)), requires_grad=True)
                    for _ in range(n_heads)]

    @property
    def scale(self) -> float:
        return 1.0 / np.sqrt(self.head_dim)

    def params(self) -> list[nn.Tensor]:
        out = []
        for wq, wk in zip(self.w_q, self.w_k):
            out.extend([wq, wk])
        return out

    def tensors(self) -> dict:
        out = {}
        for i, (wq, wk) in enumerate(zip(self.w_q, self.w_k)):
            out[f"attention.h{i}.wq"] = wq
            out[f"attention.h{i}.wk"] = wk
        return out

    def load_tensors(self, blob: dict) -> None:
        for name, t in self.tensors().items():
            arr = blob[name]
            if arr.shape != t.data.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != {t.data.shape}")
            t.data[...] = arr


def attend(q: nn.Tensor, K: nn.Tensor, V: nn.Tensor,
           params: AttentionParams) -> nn.Tensor:
    """Multi-head scaled dot-product attention over m neighbors.

    q: (1, d_k) query embedding; K: (m, d_k) neighbor embeddings;
    V: (m, d_v) neighbor value vectors. Per head the weights are the softmax
    of the projected dots scaled by 1/sqrt(head_dim) and the head output is
    the weighted sum of the rows of V. Heads concatenate to (1, n_heads*d_v);
    with no neighbors the context is the zero vector.
    """
    if q.data.ndim == 1:
        q = nn.reshape(q, (1, q.data.shape[0]))
    if K.data.shape[0] != V.data.shape[0]:
        raise ValueError(f"{K.data.shape[0]} keys vs {V.data.shape[0]} values")
    m = K.data.shape[0]
    d_v = V.data.shape[1]
    if m == 0:
        return nn.Tensor(np.zeros((1, params.n_heads * d_v)))
    heads = []
    for wq, wk in zip(params.w_q, params.w_k):
        qp = nn.matmul(q, wq)
        kp = nn.matmul(K, wk)
        logits = nn.scale(nn.matmul(qp, nn.transpose(kp)), params.scale)
        weights = nn.softmax(logits)
        heads.append(nn.matmul(weights, V))
    return nn.concat(heads, axis=1)


class ClassifierHead:
    """Three dense layers; ReLU + dropout after the first two, softmax after the last."""

    def __init__(self, in_dim: int, n_classes: int, hidden: tuple = (256, 128),
                 dropout: float = 0.5, rng: np.random.Generator | None = None):
        if n_classes < 2:
            raise ValueError("need at least two classes")
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout must satisfy 0 <= p < 1")
        if len(hidden) != 2:
            raise ValueError("head has exactly two hidden layers")
        rng = rng if rng is not None else np.random.default_rng(0)
        h1, h2 = hidden
        self.dropout = dropout
        self.w1 = nn.Tensor(rng.normal(0.0, np.sqrt(2.0 / in_dim), (in_dim, h1)),
                            requires_grad=True)
        self.b1 = nn.Tensor(np.zeros(h1), requires_grad=True)
        self.w2 = nn.Tensor(rng.normal(0.0, np.sqrt(2.0 / h1), (h1, h2)),
                            requires_grad=True)
        self.b2 = nn.Tensor(np.zeros(h2), requires_grad=True)
        self.w3 = nn.Tensor(rng.normal(0.0, np.sqrt(1.0 / h2), (h2, n_classes)),
                            requires_grad=True)
        self.b3 = nn.Tensor(np.zeros(n_classes), requires_grad=True)

    def params(self) -> list[nn.Tensor]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def tensors(self) -> dict:
        return {"head.w1": self.w1, "head.b1": self.b1,
                "head.w2": self.w2, "head.b2": self.b2,
                "head.w3": self.w3, "head.b3": self.b3}

    def load_tensors(self, blob: dict) -> None:
        for name, t in self.tensors().items():
            arr = blob[name]
            if arr.shape != t.data.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != {t.data.shape}")
            t.data[...] = arr

    def forward(self, x: nn.Tensor, train: bool = False,
                rng: np.random.Generator | None = None) -> nn.Tensor:
        h = nn.relu(nn.dense(x, self.w1, self.b1))
        h = nn.dropout(h, self.dropout, rng, train)
        h = nn.relu(nn.dense(h, self.w2, self.b2))
        h = nn.dropout(h, self.dropout, rng, train)
        return nn.softmax(nn.dense(h, self.w3, self.b3))


@dataclass
class Detection:
    bbox: BBox
    cls: str
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"bbox": self.bbox.to_list(), "class": self.cls, "score": self.score}

    @classmethod
    def from_dict(cls, d: dict) -> "Detection":
        return cls(BBox.from_list(d["bbox"]), str(d["class"]), float(d["score"]))


def save_detections(dets: list[Detection], path) -> None:
    Path(path).write_text(json.dumps([d.to_dict() for d in dets], indent=1) + "\n")


def load_detections(path) -> list[Detection]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"detections file not found: {path}")
    return [Detection.from_dict(d) for d in json.loads(path.read_text())]


class Model:
    """Backbone, embedding net, attention and head bundled with their config."""

    def __init__(self, classes=DEFAULT_CLASSES, feature_cfg: FeatureConfig | None = None,
                 n_heads: int = 3, head_dim: int = 64, embed_hidden: int = 512,
                 head_hidden: tuple = (256, 128), dropout: float = 0.5,
                 delta_neighbor: int = 20, use_context: bool = True,
                 grid_cfg: GridConfig | None = None,
                 bin_cfg: BinarizeConfig | None = None,
                 rng: np.random.Generator | None = None):
        if len(set(classes)) != len(classes):
            raise ValueError("duplicate class names")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.classes = list(classes)
        self.feature_cfg = feature_cfg or FeatureConfig()
        if self.feature_cfg.value_dim != D_K:
            raise ValueError(f"value dim {self.feature_cfg.value_dim} must equal d_k {D_K}")
        self.delta_neighbor = delta_neighbor
        self.use_context = bool(use_context)
        self.grid_cfg = grid_cfg or GridConfig()
        self.bin_cfg = bin_cfg or BinarizeConfig()
        self.backbone = Backbone(self.feature_cfg, rng)
        self.embedder = EmbeddingNet(self.feature_cfg.flat_dim, embed_hidden, rng)
        self.attention = AttentionParams(n_heads, head_dim, rng)
        ctx_dim = self.feature_cfg.value_dim * (1 + n_heads)
        self.head = ClassifierHead(ctx_dim, len(self.classes), head_hidden, dropout, rng)

    def class_index(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise ValueError(f"unknown class {name!r}") from None

    def params(self) -> list[nn.Tensor]:
        return (self.backbone.params() + self.embedder.params()
                + self.attention.params() + self.head.params())

    def tensors(self) -> dict:
        out = {}
        for part in (self.backbone, self.embedder, self.attention, self.head):
            out.update(part.tensors())
        return out

    def config(self) -> dict:
        fc = self.feature_cfg
        return {
            "classes": list(self.classes),
            "n_heads": self.attention.n_heads,
            "head_dim": self.attention.head_dim,
            "d_k": D_K,
            "embed_hidden": self.embedder.hidden,
            "head_hidden": [self.head.w1.data.shape[1], self.head.w2.data.shape[1]],
            "dropout": self.head.dropout,
            "delta_neighbor": self.delta_neighbor,
            "use_context": self.use_context,
            "warp_size": fc.warp_size,
            "conv_channels": list(fc.conv_channels),
            "kernel": fc.kernel,
            "stride": fc.stride,
            "pool_grid": fc.pool_grid,
            "grid": {"R": self.grid_cfg.R,
                     "divider_band_width": self.grid_cfg.divider_band_width,
                     "min_cc_area": self.grid_cfg.min_cc_area,
                     "max_redivide_iters": self.grid_cfg.max_redivide_iters,
                     "redivide_factor": self.grid_cfg.redivide_factor,
                     "avg_height_multiplier": self.grid_cfg.avg_height_multiplier},
            "binarize": {"mode": self.bin_cfg.mode, "threshold": self.bin_cfg.threshold},
        }

    def save(self, path) -> None:
        nn.save_checkpoint(path, self.tensors(), self.config())

    @classmethod
    def load(cls, path) -> "Model":
        tensors, cfg = nn.load_checkpoint(path)
        required = ("classes", "n_heads", "head_dim", "embed_hidden", "head_hidden",
                    "dropout", "delta_neighbor", "warp_size", "conv_channels",
                    "kernel", "stride", "pool_grid")
        missing = [k for k in required if k not in cfg]
        if missing:
            raise ValueError(f"checkpoint config missing keys: {missing}")
        fc = FeatureConfig(cfg["warp_size"], tuple(cfg["conv_channels"]),
                           cfg["kernel"], cfg["stride"], cfg["pool_grid"])
        grid = GridConfig(**cfg["grid"]) if "grid" in cfg else GridConfig()
        binz = BinarizeConfig(**cfg["binarize"]) if "binarize" in cfg else BinarizeConfig()
        model = cls(classes=cfg["classes"], feature_cfg=fc, n_heads=cfg["n_heads"],
                    head_dim=cfg["head_dim"], embed_hidden=cfg["embed_hidden"],
                    head_hidden=tuple(cfg["head_hidden"]), dropout=cfg["dropout"],
                    delta_neighbor=cfg["delta_neighbor"],
                    use_context=cfg.get("use_context", True),
                    grid_cfg=grid, bin_cfg=binz)
        for part in (model.backbone, model.embedder, model.attention, model.head):
            part.load_tensors(tensors)
        return model

    def load_pretrained(self, path) -> None:
        """Adopt backbone and embedding weights from a pretraining checkpoint."""
        tensors, _ = nn.load_checkpoint(path)
        self.backbone.load_tensors(tensors)
        self.embedder.load_tensors(tensors)


def classify(target_map: nn.Tensor, neighbor_maps: nn.Tensor, embedder: EmbeddingNet,
             attention: AttentionParams, head: ClassifierHead, pool_grid: int = 4,
             train: bool = False, rng: np.random.Generator | None = None) -> nn.Tensor:
    """Class distribution (1, n_classes) for one region given its neighbor maps."""
    if target_map.data.ndim == 3:
        target_map = nn.reshape(target_map, (1,) + target_map.data.shape)
    q = embed(embedder, target_map)
    tgt_v = value_vector(target_map, pool_grid)
    K = embed(embedder, neighbor_maps) if neighbor_maps.data.shape[0] else \
        nn.Tensor(np.zeros((0, D_K)))
    V = value_vector(neighbor_maps, pool_grid) if neighbor_maps.data.shape[0] else \
        nn.Tensor(np.zeros((0, tgt_v.data.shape[1])))
    ctx = attend(q, K, V, attention)
    x = nn.concat([tgt_v, ctx], axis=1)
    return head.forward(x, train, rng)


def classify_page(model: Model, page: GrayPage, props: ProposalSet,
                  graph: NeighborGraph, indices: list[int] | None = None,
                  train: bool = False, rng: np.random.Generator | None = None,
                  patches: np.ndarray | None = None) -> nn.Tensor:
    """Class distributions (len(indices), n_classes) for proposals on one page.

    All proposals' features are computed once and shared across the batch, so
    gradients flow into every region that serves as a neighbor.
    """
    if indices is None:
        indices = list(range(len(props)))
    if patches is None:
        patches = region_patches(page, props, model.feature_cfg.warp_size)
    maps = model.backbone.extract(patches)
    values = value_vector(maps, model.feature_cfg.pool_grid)
    embeds = embed(model.embedder, maps)
    rows = []
    for i in indices:
        # ablation: an empty neighbor list yields the zero context vector
        adj = graph.adjacency[i] if model.use_context else []
        q = nn.index_rows(embeds, [i])
        K = nn.index_rows(embeds, adj)
        V = nn.index_rows(values, adj)
        ctx = attend(q, K, V, model.attention)
        tgt = nn.index_rows(values, [i])
        rows.append(nn.concat([tgt, ctx], axis=1))
    x = rows[0] if len(rows) == 1 else nn.concat(rows, axis=0)
    return model.head.forward(x, train, rng)


def assign_ground_truth(props: ProposalSet, gts: "PageAnnotations") -> list[tuple[int, str]]:
    """Label each proposal with the class of its maximum-intersection GT box.

    Ties go to the GT earlier in reading order; proposals with zero overlap
    against every GT box are dropped.
    """
    ordered = sorted(gts.annotations, key=lambda a: reading_order_key(a.bbox))
    rows = []
    for idx, p in enumerate(props):
        best_area = 0
        best_cls = None
        for ann in ordered:
            a = intersection_area(p, ann.bbox)
            if a > best_area:
                best_area = a
                best_cls = ann.cls
        if best_cls is not None:
            rows.append((idx, best_cls))
    return rows


@dataclass
class LabeledPage:
    """A page with proposals, neighbor graph and assigned class indices."""

    page: GrayPage
    props: ProposalSet
    graph: NeighborGraph
    rows: list  # (proposal index, class index)


def build_labeled_page(model: Model, page: GrayPage, gts: "PageAnnotations",
                       props: ProposalSet | None = None) -> LabeledPage:
    if props is None:
        props = propose_page(page, model.grid_cfg, model.bin_cfg)
    graph = build_graph(props, model.delta_neighbor)
    rows = [(idx, model.class_index(cls)) for idx, cls in assign_ground_truth(props, gts)]
    return LabeledPage(page, props, graph, rows)


def evaluate_accuracy(model: Model, items: list[LabeledPage],
                      chunk: int = 16) -> float:
    """Fraction of labeled proposals classified correctly in inference mode."""
    hits = 0
    total = 0
    for item in items:
        if not item.rows:
            continue
        idxs = [i for i, _ in item.rows]
        labels = [c for _, c in item.rows]
        for lo in range(0, len(idxs), chunk):
            probs = classify_page(model, item.page, item.props, item.graph,
                                  idxs[lo:lo + chunk]).data
            pred = probs.argmax(axis=1)
            hits += int((pred == np.asarray(labels[lo:lo + chunk])).sum())
        total += len(idxs)
    return hits / total if total else float("nan")


def train_model(model: Model, items: list[LabeledPage], rng: np.random.Generator,
                epochs: int = 20, batch_size: int = 6, lr: float = 3e-4,
                weight_decay: float = 1e-5, val_items: list[LabeledPage] | None = None,
                log=None) -> list[dict]:
    """End-to-end cross-entropy training; returns per-epoch history rows."""
    if epochs <= 0 or batch_size <= 0:
        raise ValueError("epochs and batch_size must be positive")
    if not any(item.rows for item in items):
        raise ValueError("empty training set: no proposal overlaps ground truth")
    opt = nn.Adam(model.params(), lr=lr, weight_decay=weight_decay)
    patch_cache = [region_patches(item.page, item.props, model.feature_cfg.warp_size)
                   for item in items]
    history = []
    for epoch in range(epochs):
        loss_sum = 0.0
        row_count = 0
        for page_idx in rng.permutation(len(items)):
            item = items[int(page_idx)]
            if not item.rows:
                continue
            order = rng.permutation(len(item.rows))
            for lo in range(0, len(order), batch_size):
                chunk = [item.rows[int(k)] for k in order[lo:lo + batch_size]]
                idxs = [i for i, _ in chunk]
                labels = [c for _, c in chunk]
                probs = classify_page(model, item.page, item.props, item.graph,
                                      idxs, train=True, rng=rng,
                                      patches=patch_cache[int(page_idx)])
                loss = nn.cross_entropy(probs, labels)
                opt.zero_grad()
                loss.backward()
                opt.step()
                loss_sum += loss.item() * len(chunk)
                row_count += len(chunk)
        entry = {"epoch": epoch + 1, "train_loss": loss_sum / max(row_count, 1),
                 "train_acc": evaluate_accuracy(model, items)}
        if val_items is not None:
            entry["val_acc"] = evaluate_accuracy(model, val_items)
        history.append(entry)
        if log is not None:
            msg = (f"epoch {entry['epoch']}/{epochs}: loss {entry['train_loss']:.4f} "
                   f"train acc {entry['train_acc']:.3f}")
            if "val_acc" in entry:
                msg += f" val acc {entry['val_acc']:.3f}"
            log(msg)
    return history


def detect(model: Model, page: GrayPage, grid_cfg: GridConfig | None = None,
           bin_cfg: BinarizeConfig | None = None,
           delta: int | None = None) -> list[Detection]:
    """Propose, build context, classify: one Detection per proposal."""
    props = propose_page(page, grid_cfg or model.grid_cfg, bin_cfg or model.bin_cfg)
    if len(props) == 0:
        return []
    graph = build_graph(props, delta if delta is not None else model.delta_neighbor)
    probs = classify_page(model, page, props, graph).data
    dets = []
    for i, box in enumerate(props):
        k = int(probs[i].argmax())
        dets.append(Detection(box, model.classes[k], float(probs[i, k])))
    return dets
