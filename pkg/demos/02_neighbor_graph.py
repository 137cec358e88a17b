"""Neighbor graphs and context-pair sampling.

Two regions are neighbors when expanding each box by delta pixels (clamped to
the page) makes them overlap. Positive training pairs are neighbor pairs;
negatives pair a region with sampled non-neighbors. Run from the repository
root:

    python3 demos/02_neighbor_graph.py
"""

import numpy as np

from pagedet.neighbors import build_graph, sample_pairs
from pagedet.proposals import propose_page
from pagedet.synth import default_spec, generate_page

bundle = generate_page(default_spec(), seed=2024, page_id="demo")
props = propose_page(bundle.page)
print(f"{len(props)} proposals on the page")

graph = build_graph(props, delta=20)
print("\nadjacency (region -> neighbors within 20px):")
for i, (box, neigh) in enumerate(zip(props, graph.adjacency)):
    print(f"  {i:>2} {box.to_list()}  ->  {neigh}")

degrees = [len(n) for n in graph.adjacency]
print(f"\nmean degree {np.mean(degrees):.2f}, "
      f"isolated regions {degrees.count(0)}")

rng = np.random.default_rng(7)
pairs = sample_pairs(graph, k_neg=2, rng=rng)
pos = [p for p in pairs if p.label == 1]
neg = [p for p in pairs if p.label == 0]
print(f"\nsampled {len(pos)} positive and {len(neg)} negative pairs "
      f"(2 negatives per positive, capped by the non-neighbor pool)")
print("first five of each:")
for p in pos[:5]:
    print(f"  positive  region {p.target} <-> neighbor {p.other}")
for p in neg[:5]:
    print(f"  negative  region {p.target} <-> non-neighbor {p.other}")
