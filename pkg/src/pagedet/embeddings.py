"""Region embeddings and their negative-sampling pretraining.

A two-layer network maps each flattened conv map into a 256-d space. The
network is pretrained so that the sigmoid of the dot product between two
embeddings predicts whether the regions are neighbors on the page, using one
positive per neighbor edge and k_neg sampled same-page non-neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import nn
from .features import Backbone, crop_warp, flatten
from .neighbors import NeighborGraph, sample_pairs
from .page import GrayPage
from .proposals import ProposalSet

D_K = 256  # embedding width; the attention arithmetic assumes this value


class EmbeddingNet:
    """flattened conv map -> hidden (ReLU) -> 256."""

    def __init__(self, in_dim: int, hidden: int = 512,
                 rng: np.random.Generator | None = None):
        if in_dim <= 0 or hidden <= 0:
            raise ValueError("embedding dimensions must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim = in_dim
        self.hidden = hidden
        self.w1 = nn.Tensor(rng.normal(0.0, np.sqrt(2.0 / in_dim), (in_dim, hidden)),
                            requires_grad=True)
        self.b1 = nn.Tensor(np.zeros(hidden), requires_grad=True)
        # the extra 1/sqrt(D_K) keeps initial pair dot products O(1), so the
        # sigmoid discriminator starts unsaturated
        self.w2 = nn.Tensor(rng.normal(0.0, np.sqrt(1.0 / (hidden * np.sqrt(D_K))),
                                       (hidden, D_K)), requires_grad=True)
        self.b2 = nn.Tensor(np.zeros(D_K), requires_grad=True)

    def params(self) -> list[nn.Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def tensors(self) -> dict:
        return {"embedding.w1": self.w1, "embedding.b1": self.b1,
                "embedding.w2": self.w2, "embedding.b2": self.b2}

    def load_tensors(self, blob: dict) -> None:
        for name, t in self.tensors().items():
            arr = blob[name]
            if arr.shape != t.data.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != {t.data.shape}")
            t.data[...] = arr


def embed(net: EmbeddingNet, conv_maps: nn.Tensor) -> nn.Tensor:
    """Embeddings (batch, 256) for a (batch, c, h, w) stack of conv maps."""
    x = flatten(conv_maps)
    if x.data.shape[1] != net.in_dim:
        raise ValueError(f"conv map flattens to {x.data.shape[1]}, net expects {net.in_dim}")
    h = nn.relu(nn.dense(x, net.w1, net.b1))
    return nn.dense(h, net.w2, net.b2)


def score_pair(v_c, v_n) -> float:
    """P(neighbors) = sigmoid(v_c . v_n)."""
    a = v_c.data if isinstance(v_c, nn.Tensor) else np.asarray(v_c, dtype=np.float64)
    b = v_n.data if isinstance(v_n, nn.Tensor) else np.asarray(v_n, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("score_pair expects equal-length vectors")
    return float(expit(np.dot(a.reshape(-1), b.reshape(-1))))


@dataclass
class PageSample:
    """One page's worth of pretraining (or training) material."""

    page: GrayPage
    props: ProposalSet
    graph: NeighborGraph


def region_patches(page: GrayPage, props: ProposalSet, warp_size: int) -> np.ndarray:
    """Warped [0,1] patches for every proposal, stacked (n, warp, warp)."""
    if len(props) == 0:
        return np.zeros((0, warp_size, warp_size))
    return np.stack([crop_warp(page, b, warp_size) for b in props])


def pretrain(items: list[PageSample], net: EmbeddingNet, backbone: Backbone,
             rng: np.random.Generator, epochs: int = 10, k_neg: int = 5,
             lr: float = 3e-4, weight_decay: float = 1e-5,
             freeze_backbone: bool = False, log=None) -> list[float]:
    """Fit embeddings (and by default the backbone) to the neighbor objective.

    One optimizer step per page; returns the mean pair loss of each epoch.
    Raises ValueError when the corpus contains no neighbor edges at all.
    """
    if epochs <= 0:
        raise ValueError("epochs must be positive")
    if not any(any(g_adj) for item in items for g_adj in item.graph.adjacency):
        raise ValueError("no training pairs: corpus has no neighbor edges")
    params = net.params()
    saved_flags = [(p, p.requires_grad) for p in backbone.params()]
    if freeze_backbone:
        for p in backbone.params():
            p.requires_grad = False
    else:
        params = params + backbone.params()
    opt = nn.Adam(params, lr=lr, weight_decay=weight_decay)
    patches = [region_patches(item.page, item.props, backbone.cfg.warp_size)
               for item in items]
    ones_col = nn.Tensor(np.ones((D_K, 1)))
    losses = []
    try:
        for epoch in range(epochs):
            loss_sum = 0.0
            pair_count = 0
            for idx in rng.permutation(len(items)):
                item = items[int(idx)]
                pairs = sample_pairs(item.graph, k_neg, rng)
                if not pairs:
                    continue
                targets = [s.target for s in pairs]
                others = [s.other for s in pairs]
                labels = np.array([s.label for s in pairs], dtype=np.float64)
                emb = embed(net, backbone.extract(patches[int(idx)]))
                v_t = nn.index_rows(emb, targets)
                v_o = nn.index_rows(emb, others)
                dots = nn.matmul(nn.mul(v_t, v_o), ones_col)
                loss = nn.logistic_pair_loss(dots, labels[:, None])
                opt.zero_grad()
                loss.backward()
                opt.step()
                loss_sum += loss.item() * len(pairs)
                pair_count += len(pairs)
            mean_loss = loss_sum / max(pair_count, 1)
            losses.append(mean_loss)
            if log is not None:
                log(f"pretrain epoch {epoch + 1}/{epochs}: pair loss {mean_loss:.4f}")
    finally:
        for p, flag in saved_flags:
            p.requires_grad = flag
    return losses


def evaluate_pairs(items: list[PageSample], net: EmbeddingNet, backbone: Backbone,
                   rng: np.random.Generator, k_neg: int = 5) -> tuple[float, float]:
    """Mean sigmoid score over positive and over sampled negative pairs."""
    pos_scores = []
    neg_scores = []
    for item in items:
        pairs = sample_pairs(item.graph, k_neg, rng)
        if not pairs:
            continue
        patches = region_patches(item.page, item.props, backbone.cfg.warp_size)
        emb = embed(net, backbone.extract(patches)).data
        for s in pairs:
            score = float(expit(np.dot(emb[s.target], emb[s.other])))
            (pos_scores if s.label == 1 else neg_scores).append(score)
    mean_pos = float(np.mean(pos_scores)) if pos_scores else float("nan")
    mean_neg = float(np.mean(neg_scores)) if neg_scores else float("nan")
    return mean_pos, mean_neg
