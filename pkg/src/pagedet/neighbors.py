"""Neighbor graph over region proposals and pair sampling for pretraining.

Two proposals are neighbors when one of them, expanded by delta_neighbor
pixels in every direction (clamped to the page), overlaps the other with
nonzero IoU. Expansion by an equal delta makes the relation symmetric.
Sampling emits one positive per ordered neighbor edge plus k_neg negatives
drawn from the target's same-page non-neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import expand, iou
from .proposals import ProposalSet


@dataclass
class NeighborGraph:
    n: int
    adjacency: list[list[int]]
    delta_neighbor: int

    def __post_init__(self):
        if len(self.adjacency) != self.n:
            raise ValueError("adjacency length must equal proposal count")
        for i, adj in enumerate(self.adjacency):
            if i in adj:
                raise ValueError(f"adjacency must be irreflexive (node {i})")
            if any(not 0 <= j < self.n for j in adj):
                raise ValueError("neighbor index out of range")

    def non_neighbors(self, i: int) -> list[int]:
        adj = set(self.adjacency[i])
        return [j for j in range(self.n) if j != i and j not in adj]


@dataclass(frozen=True)
class PairSample:
    target: int
    other: int
    label: int  # 1 = neighbor pair, 0 = sampled non-neighbor

    def __post_init__(self):
        if self.target == self.other:
            raise ValueError("pair endpoints must differ")
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


def build_graph(props: ProposalSet, delta: int = 20) -> NeighborGraph:
    """Adjacency by expanded-box overlap: j in adj(i) iff iou(expand(i), j) > 0."""
    if delta < 0:
        raise ValueError("delta_neighbor must be >= 0")
    boxes = list(props)
    n = len(boxes)
    grown = [expand(b, delta, props.page_width, props.page_height) for b in boxes]
    adjacency = [[] for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j and iou(grown[i], boxes[j]) > 0:
                adjacency[i].append(j)
    return NeighborGraph(n, adjacency, delta)


def sample_pairs(g: NeighborGraph, k_neg: int, rng: np.random.Generator) -> list[PairSample]:
    """One positive per ordered edge, each followed by up to k_neg negatives.

    Negatives are drawn uniformly without replacement from the target's
    non-neighbors on the same page; a smaller pool yields fewer negatives.
    """
    if k_neg < 0:
        raise ValueError("k_neg must be >= 0")
    samples = []
    for i in range(g.n):
        pool = g.non_neighbors(i)
        for j in g.adjacency[i]:
            samples.append(PairSample(i, j, 1))
            if pool and k_neg > 0:
                take = min(k_neg, len(pool))
                picks = rng.choice(len(pool), size=take, replace=False)
                for p in picks:
                    samples.append(PairSample(i, pool[int(p)], 0))
    return samples
