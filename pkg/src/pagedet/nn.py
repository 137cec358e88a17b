"""Minimal double-precision neural stack with reverse-mode autodiff.

Tensor wraps a float64 ndarray plus an optional gradient buffer and a record
of the op that produced it. backward() walks the graph once in reverse
topological order; every reduction is sequential numpy, so results are
bitwise reproducible for a fixed seed and a single compute thread. There is
deliberately no GPU path, no mixed precision and no graph retention: call
forward again to get a fresh graph.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit


class Tensor:
    """N-d double-precision value with an optional reverse-mode gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Populate .grad on every reachable tensor with requires_grad set."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn()

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finish(out: Tensor, parents, backward_fn) -> Tensor:
    """Attach graph edges to an op result when any input needs gradients."""
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g over the axes that broadcasting expanded to reach g.shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data
    out = Tensor(out_data)

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.data.shape))

    return _finish(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad * a.data, b.data.shape))

    return _finish(out, (a, b), backward)


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data * s)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * s)

    return _finish(out, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ out.grad)

    return _finish(out, (a, b), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.T)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad.T)

    return _finish(out, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad.reshape(a.data.shape))

    return _finish(out, (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * out.grad.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(out.grad[tuple(idx)])

    return _finish(out, tuple(tensors), backward)


def index_rows(a, indices) -> Tensor:
    """Gather rows a[indices]; gradients scatter-add back into a."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(a.data[idx])

    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, idx, out.grad)
            a._accumulate(g)

    return _finish(out, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * (a.data > 0))

    return _finish(out, (a,), backward)


def tsum(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum())

    def backward():
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, float(out.grad)))

    return _finish(out, (a,), backward)


def tmean(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.mean())

    def backward():
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, float(out.grad) / a.data.size))

    return _finish(out, (a,), backward)


def softmax(a) -> Tensor:
    """Row-wise softmax over the last axis, max-subtracted for stability."""
    a = as_tensor(a)
    if np.isnan(a.data).any():
        raise ValueError("softmax input contains NaN")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def backward():
        if a.requires_grad:
            g = out.grad
            a._accumulate(y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _finish(out, (a,), backward)


def dense(x, W, b) -> Tensor:
    """Affine layer y = x @ W + b for a 2-d batch x."""
    return add(matmul(x, W), b)


def dropout(a, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity (the same tensor) when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout rate must satisfy 0 <= p < 1")
    a = as_tensor(a)
    if not train or p == 0.0:
        return a
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)
    return mul(a, Tensor(mask))


def conv2d(x, W, b, stride: int = 1) -> Tensor:
    """Valid-padding 2-d convolution.

    x: (batch, c_in, h, w); W: (c_out, c_in, kh, kw); b: (c_out,).
    """
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.data.ndim != 4 or W.data.ndim != 4:
        raise ValueError("conv2d expects x (b,c,h,w) and W (o,c,kh,kw)")
    if x.data.shape[1] != W.data.shape[1]:
        raise ValueError("conv2d channel mismatch")
    kh, kw = W.data.shape[2], W.data.shape[3]
    if x.data.shape[2] < kh or x.data.shape[3] < kw:
        raise ValueError("conv2d input smaller than kernel")
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out_data = np.einsum("bchwij,ocij->bohw", win, W.data, optimize=True)
    out_data += b.data[None, :, None, None]
    out = Tensor(out_data)
    ho, wo = out_data.shape[2], out_data.shape[3]

    def backward():
        g = out.grad
        if W.requires_grad:
            W._accumulate(np.einsum("bohw,bchwij->ocij", g, win, optimize=True))
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            spread = np.einsum("bohw,ocij->bchwij", g, W.data, optimize=True)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + stride * ho:stride,
                       j:j + stride * wo:stride] += spread[..., i, j]
            x._accumulate(gx)

    return _finish(out, (x, W, b), backward)


def adaptive_avg_pool2d(x, out_h: int, out_w: int) -> Tensor:
    """Average pool (batch, c, h, w) onto an out_h x out_w grid.

    Cell (i, j) averages rows [floor(i*h/out_h), ceil((i+1)*h/out_h)) and the
    analogous column span, so uneven extents are covered without remainder.
    """
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ValueError("adaptive_avg_pool2d expects (b,c,h,w)")
    bsz, c, h, w = x.data.shape
    rows = [(int(np.floor(i * h / out_h)), int(np.ceil((i + 1) * h / out_h)))
            for i in range(out_h)]
    cols = [(int(np.floor(j * w / out_w)), int(np.ceil((j + 1) * w / out_w)))
            for j in range(out_w)]
    out_data = np.empty((bsz, c, out_h, out_w))
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out_data[:, :, i, j] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    out = Tensor(out_data)

    def backward():
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for i, (r0, r1) in enumerate(rows):
                for j, (c0, c1) in enumerate(cols):
                    area = (r1 - r0) * (c1 - c0)
                    gx[:, :, r0:r1, c0:c1] += out.grad[:, :, i, j, None, None] / area
            x._accumulate(gx)

    return _finish(out, (x,), backward)


def cross_entropy(probs, labels) -> Tensor:
    """Mean of -log probs[i, labels[i]] over a (batch, classes) probability array."""
    probs = as_tensor(probs)
    p = probs.data if probs.data.ndim == 2 else probs.data[None, :]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    if labels.shape[0] != p.shape[0]:
        raise ValueError("cross_entropy label count mismatch")
    rows = np.arange(p.shape[0])
    picked = p[rows, labels]
    out = Tensor(-np.log(picked).mean())

    def backward():
        if probs.requires_grad:
            g = np.zeros_like(p)
            g[rows, labels] = -float(out.grad) / (p.shape[0] * picked)
            probs._accumulate(g.reshape(probs.data.shape))

    return _finish(out, (probs,), backward)


def nce_loss(v_c, v_n, label: int) -> Tensor:
    """-log sigma(v_c . v_n) for a positive pair, -log(1 - sigma) for a negative."""
    v_c, v_n = as_tensor(v_c), as_tensor(v_n)
    if v_c.data.shape != v_n.data.shape:
        raise ValueError("nce_loss expects equal-shaped vectors")
    if label not in (0, 1):
        raise ValueError("label must be 0 or 1")
    dot = tsum(mul(v_c, v_n))
    return logistic_pair_loss(dot, label)


def logistic_pair_loss(dots, labels) -> Tensor:
    """Mean of softplus(-dot) over label-1 entries and softplus(dot) over label-0.

    Accepts a scalar dot with an int label or an array of dots with matching
    0/1 labels; the gradient per entry is (sigma(dot) - label) / count.
    """
    dots = as_tensor(dots)
    lab = np.broadcast_to(np.asarray(labels, dtype=np.float64), dots.data.shape)
    if not np.isin(lab, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    z = np.where(lab == 1.0, -dots.data, dots.data)
    # stable softplus: log(1 + e^z) = max(z, 0) + log1p(e^-|z|)
    vals = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(vals.mean())
    count = dots.data.size

    def backward():
        if dots.requires_grad:
            dots._accumulate(float(out.grad) * (expit(dots.data) - lab) / count)

    return _finish(out, (dots,), backward)


class Adam:
    """Adam with coupled (L2-style) weight decay added to the gradient."""

    def __init__(self, params: list[Tensor], lr: float = 3e-4,
                 weight_decay: float = 1e-5, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0 or weight_decay < 0 or eps <= 0:
            raise ValueError("bad optimizer hyperparameters")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1 ** t)
            v_hat = self.v[i] / (1 - self.beta2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def grad_check(f, params: list[Tensor], h: float = 1e-5,
               max_coords_per_tensor: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    f must rebuild its graph on every call and be deterministic (disable
    dropout). With max_coords_per_tensor set, only that many coordinates per
    parameter are probed (uniformly chosen), which keeps large models cheap.
    """
    for p in params:
        p.grad = None
    out = f()
    out.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        n = flat.size
        if max_coords_per_tensor is not None and n > max_coords_per_tensor:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords_per_tensor, replace=False)
        else:
            coords = range(n)
        for c in coords:
            c = int(c)
            old = flat[c]
            flat[c] = old + h
            fp = f().item()
            flat[c] = old - h
            fm = f().item()
            flat[c] = old
            fd = (fp - fm) / (2 * h)
            a = gflat[c]
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            worst = max(worst, err)
    return worst


CHECKPOINT_VERSION = 1


def save_checkpoint(path, tensors: dict, config: dict | None = None) -> None:
    """Write tensors and config as JSON; tensor names are sorted for stability."""
    blob = {"format_version": CHECKPOINT_VERSION, "tensors": {}, "config": dict(config or {})}
    for name in sorted(tensors):
        t = tensors[name]
        arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
        blob["tensors"][name] = {"shape": list(arr.shape),
                                 "data": arr.reshape(-1).tolist()}
    Path(path).write_text(json.dumps(blob) + "\n")


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read a checkpoint; returns ({name: float64 array}, config)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = json.loads(path.read_text())
    version = blob.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    tensors = {}
    for name, spec in blob["tensors"].items():
        arr = np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
        tensors[name] = arr
    return tensors, blob.get("config", {})
