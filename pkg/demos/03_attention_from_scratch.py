"""Multi-head scaled dot-product attention over a region's neighbors.

The classifier summarizes a region's context as attend(q, K, V): the target's
embedding queries its neighbors' embeddings (keys) and mixes their value
vectors by softmax weight. This demo recomputes one head by hand, then shows
the two structural properties the pipeline relies on. Run from the repository
root:

    python3 demos/03_attention_from_scratch.py
"""

import numpy as np

from pagedet import nn
from pagedet.classifier import AttentionParams, attend

rng = np.random.default_rng(42)
m, d_v = 4, 6  # neighbors and value width
params = AttentionParams(n_heads=2, head_dim=8, rng=rng)
q = rng.normal(0, 1, (1, 256))
K = rng.normal(0, 1, (m, 256))
V = rng.normal(0, 1, (m, d_v))

out = attend(nn.Tensor(q), nn.Tensor(K), nn.Tensor(V), params)
print(f"context vector shape: {out.data.shape}  (n_heads * d_v = 2 * {d_v})")

# recompute head 0 by hand: project, scale, softmax, mix
qp = q @ params.w_q[0].data
kp = K @ params.w_k[0].data
logits = qp @ kp.T / np.sqrt(8)
e = np.exp(logits - logits.max())
weights = e / e.sum()
print(f"\nhead 0 softmax weights over {m} neighbors: "
      f"{np.round(weights[0], 4)} (sum {weights.sum():.1f})")
print(f"hand-computed head 0 matches attend: "
      f"{np.allclose(weights @ V, out.data[:, :d_v], atol=1e-12)}")

# one neighbor: softmax over a single logit is 1, so the context is exactly
# that neighbor's value vector, copied per head
one = attend(nn.Tensor(q), nn.Tensor(K[:1]), nn.Tensor(V[:1]), params)
print(f"\nsingle neighbor is an exact pass-through: "
      f"{np.array_equal(one.data, np.concatenate([V[:1]] * 2, axis=1))}")

# neighbor order never matters: permuting K and V together is a no-op
perm = rng.permutation(m)
swapped = attend(nn.Tensor(q), nn.Tensor(K[perm]), nn.Tensor(V[perm]), params)
print(f"permutation invariance max |diff|: "
      f"{np.abs(out.data - swapped.data).max():.2e}")

# no neighbors: the context collapses to zeros rather than attending to noise
empty = attend(nn.Tensor(q), nn.Tensor(K[:0]), nn.Tensor(V[:0]), params)
print(f"empty neighborhood gives a zero context: "
      f"{np.array_equal(empty.data, np.zeros((1, 2 * d_v)))}")
